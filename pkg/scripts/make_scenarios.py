"""Regenerate the bundled scenario files under src/evacharge/data/.

Layout: a 4x4 coastal grid (columns A, A, B, C from the coast inland), one
inland corridor node per row, one safe node per row beyond it, and a truck
depot attached to the middle of the grid.
"""

from __future__ import annotations

from pathlib import Path

import yaml

DATA = Path(__file__).resolve().parents[1] / "src" / "evacharge" / "data"

ROWS, COLS = 4, 4
SPACING_KM = 12.0
LEG_KM = 40.0
ZONE_OF_COL = ["A", "A", "B", "C"]


def build():
    nodes, edges = [], []
    groups: dict[str, list[int]] = {"vertical_01": [], "vertical_12": [], "corridor": [], "depot_lower": []}

    def nid(r, c):
        return r * COLS + c

    def add(t, h, km, minutes, cap):
        edges.append({"id": len(edges), "tail": t, "head": h, "length_km": km, "free_flow_min": minutes, "capacity_vph": cap})
        return len(edges) - 1

    for r in range(ROWS):
        for c in range(COLS):
            nodes.append({"id": nid(r, c), "x": c * SPACING_KM, "y": r * SPACING_KM, "zone": ZONE_OF_COL[c]})
    corridor = [ROWS * COLS + r for r in range(ROWS)]
    safe = [ROWS * COLS + ROWS + r for r in range(ROWS)]
    depot = ROWS * COLS + 2 * ROWS
    for r in range(ROWS):
        nodes.append({"id": corridor[r], "x": (COLS - 1) * SPACING_KM + LEG_KM, "y": r * SPACING_KM, "zone": "C"})
    for r in range(ROWS):
        nodes.append({"id": safe[r], "x": (COLS - 1) * SPACING_KM + 2 * LEG_KM, "y": r * SPACING_KM, "zone": "safe"})
    nodes.append({"id": depot, "x": 2 * SPACING_KM, "y": 1.5 * SPACING_KM, "zone": "B"})

    for r in range(ROWS):
        for c in range(COLS - 1):
            add(nid(r, c), nid(r, c + 1), SPACING_KM, 12.0, 200.0)
            add(nid(r, c + 1), nid(r, c), SPACING_KM, 12.0, 200.0)
    for r in range(ROWS - 1):
        for c in range(COLS):
            key = {0: "vertical_01", 1: "vertical_12"}.get(r)
            pair = [add(nid(r, c), nid(r + 1, c), SPACING_KM, 15.0, 100.0), add(nid(r + 1, c), nid(r, c), SPACING_KM, 15.0, 100.0)]
            if key:
                groups[key] += pair
    for r in range(ROWS):
        groups["corridor"].append(add(nid(r, COLS - 1), corridor[r], LEG_KM, 32.0, 300.0))
        add(corridor[r], nid(r, COLS - 1), LEG_KM, 32.0, 300.0)
        add(corridor[r], safe[r], LEG_KM, 32.0, 300.0)
    add(depot, nid(1, 2), 6.0, 6.0, 100.0)
    add(nid(1, 2), depot, 6.0, 6.0, 100.0)
    groups["depot_lower"] += [add(depot, nid(2, 2), 6.0, 6.0, 100.0), add(nid(2, 2), depot, 6.0, 6.0, 100.0)]

    stations = [{"node": corridor[r], "chargers": 1} for r in range(ROWS)]
    stations += [{"node": nid(1, 2), "chargers": 2}, {"node": nid(2, 1), "chargers": 1}]
    return nodes, edges, stations, groups, depot


def default():
    nodes, edges, stations, g, depot = build()
    two = sorted(g["vertical_12"] + g["depot_lower"])
    three = sorted(two + g["vertical_01"])
    return {
        "name": "default",
        "network": {"nodes": nodes, "edges": edges, "stations": stations},
        "hazard": {"landfall_h": 48.0, "offsets_h": {"A": 0.0, "B": 6.0, "C": 9.0, "safe": 12.0}, "tau_h": 12.0, "kappa": 0.002},
        "demand": {
            "households": {"A": 12000, "B": 6000, "C": 5000},
            "compliance": 0.65,
            "ev_share": 0.15,
            "alpha": {"A": 0.2, "B": 0.2, "C": 0.2},
            "beta": {"A": 15.0, "B": 21.0, "C": 24.0},
            "battery_kwh": 60.0,
            "soc_range": [0.3, 0.8],
            "consumption_kwh_per_km": 0.2,
            "seek_soc": 0.2,
            "target_soc": 0.8,
        },
        "charging": {"charger_kw": 120.0, "mct_charger_kw": 120.0},
        "fleet": {"trucks": 4, "chargers_per_truck": 3, "capability_kwh": 3000.0, "service_min": 120.0, "start_nodes": [depot]},
        "epochs": {"step_min": 5.0, "horizon_h": 48.0, "epoch_h": 2.5, "aug_every": 3, "n_local": 5, "reroute_min": 15.0},
        "toggles": {},
        "variants": {
            "higher_participation": {"evacuation_rate": 0.75},
            "flatter": {"alpha": 0.15},
            "concentrated": {"alpha": 0.25},
            "station_failure_15": {"station_failure_prob": 0.15},
            "station_failure_30": {"station_failure_prob": 0.30},
            "station_failure_45": {"station_failure_prob": 0.45},
            "reduced_capacity": {"reduced_capacity": {"edges": g["corridor"][1:3], "factor": 0.5}},
            "two_components": {"closed_edges": two},
            "three_components": {"closed_edges": three},
        },
        "seeds": list(range(10)),
    }


def tiny():
    doc = default()
    doc["name"] = "tiny"
    doc["network"]["stations"] = [s for k, s in enumerate(doc["network"]["stations"]) if k in (0, 1, 2, 4)]
    doc["demand"]["households"] = {"A": 6000, "B": 3000, "C": 2500}
    doc["fleet"]["trucks"] = 2
    doc["variants"] = {k: v for k, v in doc["variants"].items() if not k.endswith("components")}
    doc["seeds"] = [0, 1, 2]
    return doc


def toy():
    """Impending-congestion toy: a truck at D reaches station S via X or via Y.

    Evacuees from O all funnel through the short X -> S link, which is free at
    dispatch time and jammed a few minutes later; the Y detour never carries
    evacuation traffic.
    """
    O, X, D, Y, S, Z = 0, 1, 2, 3, 4, 5
    nodes = [
        {"id": O, "x": 0.0, "y": 0.0, "zone": "A"},
        {"id": X, "x": 8.0, "y": 0.0, "zone": "B"},
        {"id": D, "x": 4.0, "y": 6.0, "zone": "B"},
        {"id": Y, "x": 10.0, "y": 8.0, "zone": "B"},
        {"id": S, "x": 16.0, "y": 0.0, "zone": "C"},
        {"id": Z, "x": 30.0, "y": 0.0, "zone": "safe"},
    ]
    spec = [
        (O, X, 8.0, 8.0, 4000.0),
        (X, S, 8.0, 10.0, 300.0),
        (S, Z, 14.0, 12.0, 6000.0),
        (D, X, 7.0, 10.0, 1000.0),
        (X, D, 7.0, 10.0, 1000.0),
        (D, Y, 10.0, 12.0, 1000.0),
        (Y, D, 10.0, 12.0, 1000.0),
        (Y, S, 10.0, 12.0, 1000.0),
        (S, Y, 10.0, 12.0, 1000.0),
        (S, X, 8.0, 10.0, 1000.0),
    ]
    edges = [
        {"id": k, "tail": t, "head": h, "length_km": km, "free_flow_min": mins, "capacity_vph": cap}
        for k, (t, h, km, mins, cap) in enumerate(spec)
    ]
    doc = default()
    doc.update(
        {
            "name": "toy",
            "network": {"nodes": nodes, "edges": edges, "stations": [{"node": S, "chargers": 2}]},
            "fleet": {"trucks": 1, "chargers_per_truck": 3, "capability_kwh": 3000.0, "service_min": 120.0, "start_nodes": [D]},
            "variants": {},
            "seeds": [0],
        }
    )
    doc["demand"].update({"households": {"A": 4000, "B": 0, "C": 0}, "compliance": 1.0, "alpha": {"A": 6.0, "B": 0.2, "C": 0.2}, "beta": {"A": 3.0, "B": 21.0, "C": 24.0}})
    doc["epochs"].update({"horizon_h": 7.5})
    return doc


def main() -> None:
    for name, doc in (("default", default()), ("tiny", tiny()), ("toy", toy())):
        (DATA / f"{name}.yaml").write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")


if __name__ == "__main__":
    main()
