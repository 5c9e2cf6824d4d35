"""Hurricane hazard clock, zone-delayed local hazard and charger failures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _default_offsets() -> dict[str, float]:
    return {"A": 0.0, "B": 6.0, "C": 9.0, "safe": 12.0}


@dataclass(frozen=True)
class HazardModel:
    landfall_h: float = 48.0
    offsets_h: dict[str, float] = field(default_factory=_default_offsets)
    tau_h: float = 12.0
    kappa: float = 0.002
    step_min: float = 5.0

    def __post_init__(self) -> None:
        if self.landfall_h <= 0:
            raise ValueError("landfall must be positive")
        if self.tau_h <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if any(v < 0 for v in self.offsets_h.values()):
            raise ValueError("zone offsets must be non-negative")

    def global_hazard(self, t_h: float) -> float:
        """Remaining hours to landfall."""
        return self.landfall_h - t_h

    def offset(self, zone: str) -> float:
        return self.offsets_h[zone]


def local_hazard(model: HazardModel, zone: str, t_h: float) -> float:
    return model.global_hazard(t_h) + model.offset(zone)


def per_capita_risk(model: HazardModel, zone: str, t_h: float) -> float:
    h = local_hazard(model, zone, t_h)
    if h <= 0.0:
        return 1.0
    return math.exp(-h / model.tau_h)


def saturation_time(model: HazardModel, zone: str) -> float:
    """Time (h) at which the local hazard reaches zero and risk saturates at 1."""
    return model.landfall_h + model.offset(zone)


def sample_charger_failures(model: HazardModel, operational: int, risk: float, rng: np.random.Generator) -> int:
    """Operational chargers left after one step; each fails w.p. min(1, kappa * risk)."""
    if operational <= 0:
        return 0
    p = min(1.0, model.kappa * risk)
    if p <= 0.0:
        return operational
    return operational - int(rng.binomial(operational, p))
