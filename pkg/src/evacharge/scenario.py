"""Scenario file schema and conversion to runtime objects.

A scenario file is YAML.  Every section is validated before use and unknown
keys are rejected.  ``variants`` holds named toggle sets (demand
perturbations, station failures, link failures) applied on top of the base
``toggles``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .demand import DemandSpec
from .hazard import HazardModel
from .network import Edge, NetworkError, RoadNetwork


class ScenarioError(ValueError):
    """Scenario file failed validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NodeCfg(_Strict):
    id: int
    x: float
    y: float
    zone: Literal["A", "B", "C", "safe"]


class EdgeCfg(_Strict):
    id: int
    tail: int
    head: int
    length_km: float = Field(gt=0)
    free_flow_min: float = Field(gt=0)
    capacity_vph: float = Field(gt=0)


class StationCfg(_Strict):
    node: int
    chargers: int = Field(ge=0)


class NetworkCfg(_Strict):
    nodes: list[NodeCfg]
    edges: list[EdgeCfg]
    stations: list[StationCfg] = Field(min_length=1)


class ZoneOffsets(_Strict):
    A: float = Field(0.0, ge=0)
    B: float = Field(6.0, ge=0)
    C: float = Field(9.0, ge=0)
    safe: float = Field(12.0, ge=0)


class HazardCfg(_Strict):
    landfall_h: float = Field(48.0, gt=0)
    offsets_h: ZoneOffsets = ZoneOffsets()
    tau_h: float = Field(12.0, gt=0)
    kappa: float = Field(0.002, ge=0, le=1)


class ZoneInts(_Strict):
    A: int = Field(0, ge=0)
    B: int = Field(0, ge=0)
    C: int = Field(0, ge=0)


class ZoneFloats(_Strict):
    A: float
    B: float
    C: float


class DemandCfg(_Strict):
    households: ZoneInts
    compliance: float = Field(0.65, ge=0, le=1)
    ev_share: float = Field(0.15, ge=0, le=1)
    alpha: ZoneFloats = ZoneFloats(A=0.2, B=0.2, C=0.2)
    beta: ZoneFloats = ZoneFloats(A=15.0, B=21.0, C=24.0)
    battery_kwh: float = Field(60.0, gt=0)
    soc_range: tuple[float, float] = (0.3, 0.8)
    consumption_kwh_per_km: float = Field(0.2, gt=0)
    seek_soc: float = Field(0.2, ge=0, le=1)
    target_soc: float = Field(0.8, ge=0, le=1)

    @field_validator("alpha")
    @classmethod
    def _alpha_positive(cls, v: ZoneFloats) -> ZoneFloats:
        if min(v.A, v.B, v.C) <= 0:
            raise ValueError("alpha must be positive")
        return v

    @model_validator(mode="after")
    def _soc_order(self) -> "DemandCfg":
        lo, hi = self.soc_range
        if not 0 <= lo <= hi <= 1:
            raise ValueError("soc_range must satisfy 0 <= low <= high <= 1")
        if self.seek_soc >= self.target_soc:
            raise ValueError("seek_soc must be below target_soc")
        return self


class ChargingCfg(_Strict):
    charger_kw: float = Field(120.0, gt=0)
    mct_charger_kw: float = Field(120.0, gt=0)


class FleetCfg(_Strict):
    trucks: int = Field(4, ge=0)
    chargers_per_truck: int = Field(3, ge=0)
    capability_kwh: float = Field(3000.0, ge=0)
    service_min: float = Field(120.0, gt=0)
    start_nodes: list[int] = Field(default_factory=list)


class EpochCfg(_Strict):
    step_min: float = Field(5.0, gt=0)
    horizon_h: float = Field(48.0, gt=0)
    epoch_h: float = Field(2.5, gt=0)
    aug_every: int = Field(3, ge=1)
    n_local: int = Field(5, ge=1)
    reroute_min: float = Field(15.0, gt=0)


class ReducedCapacityCfg(_Strict):
    edges: list[int] = Field(default_factory=list)
    factor: float = Field(0.5, gt=0, le=1)


class ToggleCfg(_Strict):
    evacuation_rate: Optional[float] = Field(None, ge=0, le=1)
    alpha: Optional[float] = Field(None, gt=0)
    station_failure_prob: float = Field(0.0, ge=0, le=1)
    reduced_capacity: ReducedCapacityCfg = ReducedCapacityCfg()
    closed_edges: list[int] = Field(default_factory=list)


class ScenarioCfg(_Strict):
    name: str = "scenario"
    network: NetworkCfg
    hazard: HazardCfg = HazardCfg()
    demand: DemandCfg
    charging: ChargingCfg = ChargingCfg()
    fleet: FleetCfg = FleetCfg()
    epochs: EpochCfg = EpochCfg()
    toggles: ToggleCfg = ToggleCfg()
    variants: dict[str, ToggleCfg] = Field(default_factory=dict)
    seeds: list[int] = Field(default_factory=lambda: [0])

    @model_validator(mode="after")
    def _references(self) -> "ScenarioCfg":
        node_ids = {n.id for n in self.network.nodes}
        if len(node_ids) != len(self.network.nodes):
            raise ValueError("duplicate node id")
        n_edges = len(self.network.edges)
        for k, e in enumerate(self.network.edges):
            if e.id != k:
                raise ValueError(f"edge ids must be 0..{n_edges - 1} in order (edge {k} has id {e.id})")
            if e.tail not in node_ids or e.head not in node_ids:
                raise ValueError(f"edge {e.id} references an unknown node")
        for s in self.network.stations:
            if s.node not in node_ids:
                raise ValueError(f"station node {s.node} does not exist")
        for n in self.fleet.start_nodes:
            if n not in node_ids:
                raise ValueError(f"truck start node {n} does not exist")
        if self.fleet.trucks > 0 and not self.fleet.start_nodes:
            raise ValueError("fleet.start_nodes is required when trucks > 0")
        for name, tog in [("toggles", self.toggles), *self.variants.items()]:
            for e in [*tog.closed_edges, *tog.reduced_capacity.edges]:
                if not 0 <= e < n_edges:
                    raise ValueError(f"{name}: edge {e} out of range")
        if not any(n.zone == "safe" for n in self.network.nodes):
            raise ValueError("no safe node in network")
        return self


@dataclass(frozen=True)
class FleetSpec:
    trucks: int = 4
    chargers_per_truck: int = 3
    capability_kwh: float = 3000.0
    service_min: float = 120.0
    start_nodes: tuple[int, ...] = ()

    def start_node(self, k: int) -> int:
        return self.start_nodes[k % len(self.start_nodes)]


@dataclass(frozen=True)
class EpochSpec:
    step_min: float = 5.0
    horizon_h: float = 48.0
    epoch_h: float = 2.5
    aug_every: int = 3
    n_local: int = 5
    reroute_min: float = 15.0

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_h * 60.0 / self.step_min))

    @property
    def steps_per_epoch(self) -> int:
        return int(round(self.epoch_h * 60.0 / self.step_min))

    @property
    def n_epochs(self) -> int:
        return int(self.horizon_h // self.epoch_h) + 1

    @property
    def dt_h(self) -> float:
        return self.step_min / 60.0


@dataclass(frozen=True)
class Toggles:
    evacuation_rate: float | None = None
    alpha: float | None = None
    station_failure_prob: float = 0.0
    reduced_capacity_edges: tuple[int, ...] = ()
    reduced_capacity_factor: float = 0.5
    closed_edges: tuple[int, ...] = ()


@dataclass(frozen=True)
class Scenario:
    """Runtime view of one scenario variant."""

    name: str
    network: RoadNetwork
    hazard: HazardModel
    demand: DemandSpec
    fleet: FleetSpec
    epochs: EpochSpec
    toggles: Toggles
    charger_kw: float = 120.0
    mct_charger_kw: float = 120.0
    seeds: tuple[int, ...] = (0,)

    def with_fleet_size(self, trucks: int) -> "Scenario":
        return replace(self, fleet=replace(self.fleet, trucks=trucks))


def _toggles(t: ToggleCfg) -> Toggles:
    return Toggles(
        evacuation_rate=t.evacuation_rate,
        alpha=t.alpha,
        station_failure_prob=t.station_failure_prob,
        reduced_capacity_edges=tuple(t.reduced_capacity.edges),
        reduced_capacity_factor=t.reduced_capacity.factor,
        closed_edges=tuple(t.closed_edges),
    )


def build_network(cfg: NetworkCfg) -> RoadNetwork:
    return RoadNetwork(
        nodes={n.id: (n.x, n.y) for n in cfg.nodes},
        edges=[Edge(e.id, e.tail, e.head, e.length_km, e.free_flow_min, e.capacity_vph) for e in cfg.edges],
        stations=[s.node for s in cfg.stations],
        zones={n.id: n.zone for n in cfg.nodes},
        station_chargers=[s.chargers for s in cfg.stations],
    )


def to_runtime(cfg: ScenarioCfg, variant: str | None = None) -> Scenario:
    tog = cfg.toggles
    name = cfg.name
    if variant not in (None, "base"):
        if variant not in cfg.variants:
            raise ScenarioError(f"unknown variant {variant!r}; known: {sorted(cfg.variants)}")
        tog = cfg.variants[variant]
        name = f"{cfg.name}:{variant}"
    toggles = _toggles(tog)
    d = cfg.demand
    compliance = d.compliance if toggles.evacuation_rate is None else toggles.evacuation_rate
    alpha = d.alpha.model_dump()
    if toggles.alpha is not None:
        alpha = {z: toggles.alpha for z in alpha}
    demand = DemandSpec(
        households=d.households.model_dump(),
        compliance=compliance,
        ev_share=d.ev_share,
        alpha=alpha,
        beta=d.beta.model_dump(),
        battery_kwh=d.battery_kwh,
        soc_low=d.soc_range[0],
        soc_high=d.soc_range[1],
        consumption_kwh_per_km=d.consumption_kwh_per_km,
        seek_soc=d.seek_soc,
        target_soc=d.target_soc,
    )
    hazard = HazardModel(
        landfall_h=cfg.hazard.landfall_h,
        offsets_h=cfg.hazard.offsets_h.model_dump(),
        tau_h=cfg.hazard.tau_h,
        kappa=cfg.hazard.kappa,
        step_min=cfg.epochs.step_min,
    )
    try:
        network = build_network(cfg.network)
    except NetworkError as exc:
        raise ScenarioError(str(exc)) from exc
    f = cfg.fleet
    return Scenario(
        name=name,
        network=network,
        hazard=hazard,
        demand=demand,
        fleet=FleetSpec(f.trucks, f.chargers_per_truck, f.capability_kwh, f.service_min, tuple(f.start_nodes)),
        epochs=EpochSpec(**cfg.epochs.model_dump()),
        toggles=toggles,
        charger_kw=cfg.charging.charger_kw,
        mct_charger_kw=cfg.charging.mct_charger_kw,
        seeds=tuple(cfg.seeds),
    )


def parse_scenario(data: dict) -> ScenarioCfg:
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a mapping")
    try:
        return ScenarioCfg.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ScenarioError(f"{loc}: {first['msg']}") from exc


BUNDLED = ("default", "tiny", "toy")


def load_scenario_cfg(path: str | Path) -> ScenarioCfg:
    """Load ``path``; the names in ``BUNDLED`` refer to scenarios shipped with the package."""
    if str(path) in BUNDLED:
        text = resources.files("evacharge.data").joinpath(f"{path}.yaml").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"YAML syntax error: {exc}") from exc
    return parse_scenario(data)


def load_scenario(path: str | Path, variant: str | None = None) -> Scenario:
    return to_runtime(load_scenario_cfg(path), variant)


def dump_scenario_cfg(cfg: ScenarioCfg) -> str:
    return yaml.safe_dump(copy.deepcopy(cfg.model_dump(mode="json")), sort_keys=False)
