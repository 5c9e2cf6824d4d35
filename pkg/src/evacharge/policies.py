"""Non-learning dispatch baselines and the shared policy interface."""

from __future__ import annotations

import numpy as np

from .simulator import Observation, Simulation


def greedy(obs: Observation) -> int:
    """Candidate with the largest R*Q; ties by shorter travel time, then smaller id.

    Unreachable candidates are only chosen when nothing is reachable.
    """
    if len(obs.candidates) == 0:
        raise ValueError("empty candidate set")
    score = obs.risk * obs.queue
    reach = np.isfinite(obs.travel_min)
    best = None
    for j, sid in enumerate(obs.candidates):
        key = (not reach[j], -score[j], obs.travel_min[j], int(sid))
        if best is None or key < best[0]:
            best = (key, int(sid))
    return best[1]


class GreedyPolicy:
    name = "greedy"

    def reset(self, sim: Simulation) -> None:
        pass

    def act(self, sim: Simulation, observations: list[Observation]) -> list[int | None]:
        out: list[int | None] = []
        for o in observations:
            out.append(greedy(o) if o.reachable.any() else None)
        return out


class HoldPolicy:
    """Keeps every truck where it is; with an empty fleet this is the No-MCT baseline."""

    name = "no-mct"

    def reset(self, sim: Simulation) -> None:
        pass

    def act(self, sim: Simulation, observations: list[Observation]) -> list[int | None]:
        return [None] * len(observations)


def check_action(obs: Observation, action: int | None) -> bool:
    """True when ``action`` is admissible for ``obs`` (None means hold)."""
    return action is None or int(action) in set(int(c) for c in obs.candidates)


class FixedTargetPolicy:
    """Holds until ``from_epoch``, then sends every idle truck to station ``target``."""

    name = "fixed"

    def __init__(self, target: int, from_epoch: int = 0):
        self.target = int(target)
        self.from_epoch = int(from_epoch)

    def reset(self, sim: Simulation) -> None:
        pass

    def act(self, sim: Simulation, observations: list[Observation]) -> list[int | None]:
        out: list[int | None] = []
        for o in observations:
            ok = o.epoch >= self.from_epoch and self.target in set(int(c) for c in o.candidates)
            out.append(self.target if ok else None)
        return out
