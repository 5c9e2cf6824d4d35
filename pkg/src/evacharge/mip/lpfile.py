"""LP text-format export and a parser for round-trip checks."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .model import MipInstance, ModelMatrices, build_model


def _num(v: float) -> str:
    return repr(float(v))


def _obj(v: float) -> str:
    return format(float(v), ".12g")


def _terms(row: np.ndarray, names: list[str], fmt=_num) -> str:
    parts = []
    for j in np.flatnonzero(row):
        v = row[j]
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {fmt(abs(v))} {names[j]}")
    if not parts:
        return "0 " + names[0]
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else "-" + s[1:]


def export_lp(inst: MipInstance, path: str | Path) -> ModelMatrices:
    """Write the complete model; objective coefficients use 12 significant digits."""
    mm = build_model(inst)
    names = mm.layout.names()
    lines = ["\\ MCT deployment model", "Minimize"]
    obj = " obj: " + _terms(mm.c, names, _obj)
    if mm.const:
        obj += f" + {_obj(mm.const)}" if mm.const > 0 else f" - {_obj(-mm.const)}"
    lines.append(obj)
    lines.append("Subject To")
    for name, row, b in zip(mm.ub_names, mm.A_ub, mm.b_ub):
        lines.append(f" {name}: {_terms(row, names)} <= {_num(b)}")
    for name, row, b in zip(mm.eq_names, mm.A_eq, mm.b_eq):
        lines.append(f" {name}: {_terms(row, names)} = {_num(b)}")
    lines.append("Bounds")
    for j, nm in enumerate(names):
        if mm.binary[j]:
            continue
        up = mm.upper[j]
        lines.append(f" 0 <= {nm} <= {_num(up)}" if np.isfinite(up) else f" {nm} >= 0")
    lines.append("Binaries")
    bins = [names[j] for j in np.flatnonzero(mm.binary)]
    for s in range(0, len(bins), 8):
        lines.append(" " + " ".join(bins[s : s + 8]))
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return mm


_TERM = re.compile(r"([+-])?\s*([0-9.eE+-]+)?\s*([A-Za-z_][A-Za-z0-9_]*)")


def _parse_expr(expr: str, index: dict[str, int], n: int) -> tuple[np.ndarray, float]:
    row = np.zeros(n)
    const = 0.0
    toks = re.findall(r"[+-]|[^\s+-]+(?:[eE][+-]?\d+)?", expr)
    sign, coef = 1.0, None
    for t in toks:
        if t in "+-":
            sign = -1.0 if t == "-" else 1.0
            continue
        try:
            v = float(t)
        except ValueError:
            row[index[t]] += sign * (1.0 if coef is None else coef)
            sign, coef = 1.0, None
            continue
        if coef is not None:
            const += sign * coef
            sign = 1.0
        coef = v
    if coef is not None:
        const += sign * coef
    return row, const


def parse_lp(path: str | Path) -> dict:
    """Parse a file written by ``export_lp`` back into matrices."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    section = None
    obj_line = ""
    cons: list[tuple[str, str, str, float]] = []
    bounds: dict[str, float] = {}
    binaries: list[str] = []
    for raw in text:
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        low = line.lower()
        if low in ("minimize", "subject to", "bounds", "binaries", "end"):
            section = low
            continue
        if section == "minimize":
            obj_line += " " + line.split(":", 1)[1]
        elif section == "subject to":
            name, rest = line.split(":", 1)
            m = re.match(r"(.*?)(<=|>=|=)\s*(\S+)$", rest.strip())
            cons.append((name.strip(), m.group(1), m.group(2), float(m.group(3))))
        elif section == "bounds":
            m = re.match(r"0 <= (\S+) <= (\S+)$", line)
            if m:
                bounds[m.group(1)] = float(m.group(2))
            else:
                bounds[line.split()[0]] = np.inf
        elif section == "binaries":
            binaries.extend(line.split())
    names = list(bounds) + binaries
    names_sorted = sorted(set(names), key=names.index)
    return {"objective": obj_line, "constraints": cons, "bounds": bounds, "binaries": binaries, "names": names_sorted}


def parsed_matrices(parsed: dict, names: list[str]) -> dict[str, np.ndarray]:
    """Matrices of a parsed file in the column order ``names``."""
    index = {nm: j for j, nm in enumerate(names)}
    n = len(names)
    c, const = _parse_expr(parsed["objective"], index, n)
    ub, bu, eq, be = [], [], [], []
    for _, expr, op, rhs in parsed["constraints"]:
        row, k = _parse_expr(expr, index, n)
        if op == "<=":
            ub.append(row)
            bu.append(rhs - k)
        elif op == "=":
            eq.append(row)
            be.append(rhs - k)
        else:
            ub.append(-row)
            bu.append(-(rhs - k))
    upper = np.ones(n)
    for nm, v in parsed["bounds"].items():
        upper[index[nm]] = v
    binary = np.zeros(n, dtype=bool)
    for nm in parsed["binaries"]:
        binary[index[nm]] = True
    return {
        "c": c,
        "const": np.array(const),
        "A_ub": np.array(ub).reshape(-1, n),
        "b_ub": np.array(bu),
        "A_eq": np.array(eq).reshape(-1, n),
        "b_eq": np.array(be),
        "upper": upper,
        "binary": binary,
    }
