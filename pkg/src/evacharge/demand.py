"""Evacuee population, sigmoid departures, EV energy and station choice."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .network import RoadNetwork, distance_matrix, path_from_distances, path_length_km


class NoSafeNode(Exception):
    """An origin cannot reach any safe node."""


class Status(IntEnum):
    WAITING = 0
    DRIVING = 1
    QUEUING = 2
    CHARGING = 3
    ARRIVED = 4
    STRANDED = 5


@dataclass
class Evacuee:
    id: int
    origin: int
    destination: int | None
    departure_min: float
    is_ev: bool
    battery_kwh: float = 0.0
    soc: float = 1.0
    consumption_kwh_per_km: float = 0.0
    status: Status = Status.WAITING


def _default_alpha() -> dict[str, float]:
    return {"A": 0.2, "B": 0.2, "C": 0.2}


def _default_beta() -> dict[str, float]:
    return {"A": 15.0, "B": 21.0, "C": 24.0}


@dataclass
class DemandSpec:
    households: dict[str, int]
    compliance: float = 0.65
    ev_share: float = 0.15
    alpha: dict[str, float] = field(default_factory=_default_alpha)
    beta: dict[str, float] = field(default_factory=_default_beta)
    battery_kwh: float = 60.0
    soc_low: float = 0.3
    soc_high: float = 0.8
    consumption_kwh_per_km: float = 0.2
    seek_soc: float = 0.2
    target_soc: float = 0.8

    def __post_init__(self) -> None:
        for name in ("compliance", "ev_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if any(a <= 0 for a in self.alpha.values()):
            raise ValueError("sigmoid steepness must be positive")
        if not 0.0 <= self.soc_low <= self.soc_high <= 1.0:
            raise ValueError("bad initial SoC interval")


def departure_fraction(t: float, alpha: float, beta: float) -> float:
    """Cumulative share of households departed by hour ``t``."""
    z = -alpha * (t - beta)
    if z > 700:
        return 0.0
    return 1.0 / (1.0 + math.exp(z))


def sample_departures(n: int, alpha: float, beta: float, horizon_h: float, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from the sigmoid truncated to [0, horizon]; hours."""
    lo = departure_fraction(0.0, alpha, beta)
    hi = departure_fraction(horizon_h, alpha, beta)
    u = lo + (hi - lo) * rng.random(n)
    t = beta + np.log(u / (1.0 - u)) / alpha
    return np.clip(t, 0.0, horizon_h)


def nearest_safe_nodes(net: RoadNetwork, closed: Iterable[int] = ()) -> dict[int, int | None]:
    """Nearest safe node (free-flow cost, ties by node id) for every node; None if cut off."""
    dist = distance_matrix(net, net.free_flow_snapshot(closed))
    safe = net.safe_nodes()
    out: dict[int, int | None] = {}
    for n in net.node_ids:
        i = net.node_index[n]
        best = None
        for s in safe:
            d = dist[i, net.node_index[s]]
            if np.isfinite(d) and (best is None or d < best[0]):
                best = (d, s)
        out[n] = None if best is None else best[1]
    return out


def generate_evacuees(
    spec: DemandSpec,
    net: RoadNetwork,
    rng: np.random.Generator,
    horizon_h: float = 48.0,
    closed: Iterable[int] = (),
    on_unreachable: str = "raise",
) -> list[Evacuee]:
    """Draw the evacuating population.

    ``on_unreachable="strand"`` keeps evacuees whose origin cannot reach a safe
    node (fragmented networks) and marks them stranded instead of raising.
    """
    dest_of = nearest_safe_nodes(net, closed)
    people: list[Evacuee] = []
    for zone in ("A", "B", "C"):
        count = int(math.floor(spec.households.get(zone, 0) * spec.compliance + 0.5))
        if count == 0:
            continue
        zone_nodes = sorted(n for n, z in net.zones.items() if z == zone)
        if not zone_nodes:
            raise ValueError(f"zone {zone} has households but no nodes")
        origins = rng.choice(np.array(zone_nodes), size=count)
        departs = sample_departures(count, spec.alpha[zone], spec.beta[zone], horizon_h, rng)
        is_ev = rng.random(count) < spec.ev_share
        socs = rng.uniform(spec.soc_low, spec.soc_high, size=count)
        for o, t, ev, soc in zip(origins, departs, is_ev, socs):
            dest = dest_of[int(o)]
            status = Status.WAITING
            if dest is None:
                if on_unreachable == "raise":
                    raise NoSafeNode(f"origin {int(o)} cannot reach a safe node")
                status = Status.STRANDED
            people.append(
                Evacuee(
                    id=len(people),
                    origin=int(o),
                    destination=dest,
                    departure_min=float(t) * 60.0,
                    is_ev=bool(ev),
                    battery_kwh=spec.battery_kwh if ev else 0.0,
                    soc=float(soc) if ev else 1.0,
                    consumption_kwh_per_km=spec.consumption_kwh_per_km if ev else 0.0,
                    status=status,
                )
            )
    return people


def select_station(
    net: RoadNetwork,
    costs: np.ndarray,
    dist: np.ndarray,
    node: int,
    range_km: float,
    usable: Sequence[bool] | None = None,
) -> int | None:
    """Closest station (snapshot minutes) whose min-time path fits in the remaining range.

    Returns the station index, or None when nothing is reachable.
    """
    o = net.node_index[node]
    best: tuple[float, int] | None = None
    for sid, snode in enumerate(net.stations):
        if usable is not None and not usable[sid]:
            continue
        d = dist[o, net.node_index[snode]]
        if not np.isfinite(d):
            continue
        km = path_length_km(net, path_from_distances(net, costs, dist, node, snode))
        if km > range_km + 1e-9:
            continue
        if best is None or d < best[0]:
            best = (float(d), sid)
    return None if best is None else best[1]
