"""Load-flow oracle for designed attacks.

The attacked injection readings are turned back into a demand profile,
solved with the same Newton load flow that produced the steady state, and
the resulting flows, injections and voltages are compared row by row with
the fabricated ones. An attack whose fabricated values the oracle
reproduces is internally consistent and therefore invisible to a
residual-based detector.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from gridfdi.grid import Load
from gridfdi.powerflow import KINDS, LoadflowError, MeasurementModel, Network, solve_loadflow

DEFAULT_THRESHOLD = 1.0  # percent
ANGLE_THRESHOLD_DEG = 0.05
FLOOR_PU = 1e-3

_KIND_ORDER = {k: i for i, k in enumerate(KINDS + ("V", "theta"))}


@dataclass(frozen=True)
class Row:
    key: str
    kind: str
    design: float
    oracle: float
    unit: str  # "pu" or "deg"

    @property
    def diff(self) -> float:
        return self.design - self.oracle

    def pct(self, floor: float = FLOOR_PU) -> float:
        denom = self.design if abs(self.design) >= floor else math.copysign(floor, self.design or 1.0)
        return 100.0 * self.diff / denom

    @property
    def is_angle(self) -> bool:
        return self.unit == "deg"


def _sort_key(key: str):
    kind, *rest = key.split("_")
    return (_KIND_ORDER.get(kind, len(_KIND_ORDER)), kind, *rest)


def compare_sets(design: Mapping[str, float], oracle: Mapping[str, float], *, units: Mapping[str, str] | None = None) -> list[Row]:
    """Pair up two value tables by key.

    Keys must match exactly; rows come out sorted by kind, then
    branch/node, then phase. ``units`` tags angle rows with ``"deg"``.
    """
    missing = sorted(set(design) - set(oracle))
    extra = sorted(set(oracle) - set(design))
    if missing or extra:
        raise KeyError(f"key mismatch: missing from oracle {missing}, extra in oracle {extra}")
    units = units or {}
    rows = []
    for key in sorted(design, key=_sort_key):
        rows.append(Row(key, key.split("_", 1)[0], float(design[key]), float(oracle[key]), units.get(key, "pu")))
    return rows


@dataclass
class AssessmentReport:
    rows: list[Row]
    threshold: float = DEFAULT_THRESHOLD
    angle_threshold: float = ANGLE_THRESHOLD_DEG
    floor: float = FLOOR_PU
    oracle_iterations: int = 0
    reason: str = ""
    s_base: float = 1.0
    extra: dict = field(default_factory=dict)

    def pcts(self, angles: bool = False) -> np.ndarray:
        return np.array([r.pct(self.floor) for r in self.rows if r.is_angle == angles])

    @property
    def max_abs_pct_diff(self) -> float:
        p = self.pcts()
        return float(np.max(np.abs(p))) if p.size else 0.0

    @property
    def max_angle_diff_deg(self) -> float:
        d = [abs(r.diff) for r in self.rows if r.is_angle]
        return max(d) if d else 0.0

    @property
    def stealthy(self) -> bool:
        if self.reason:
            return False
        return self.max_abs_pct_diff < self.threshold and self.max_angle_diff_deg <= self.angle_threshold

    @property
    def verdict(self) -> str:
        return "stealthy" if self.stealthy else "detectable"

    def mean_abs_pct(self, kinds=("V", "theta")) -> float:
        p = [abs(r.pct(self.floor)) for r in self.rows if r.kind in kinds]
        return float(np.mean(p)) if p else 0.0

    def _display(self, r: Row, v: float) -> float:
        return v * self.s_base / 1e3 if r.kind in ("PF", "QF", "PI", "QI") else v

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "kind", "unit", "design", "oracle", "diff", "pct_diff"])
        for r in self.rows:
            unit = {"PF": "kW", "PI": "kW", "QF": "kVAr", "QI": "kVAr"}.get(r.kind, r.unit)
            w.writerow([r.key, r.kind, unit, f"{self._display(r, r.design):.9g}", f"{self._display(r, r.oracle):.9g}",
                        f"{self._display(r, r.diff):.6e}", f"{r.pct(self.floor):.6e}"])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "max_abs_pct_diff": self.max_abs_pct_diff,
            "max_angle_diff_deg": self.max_angle_diff_deg,
            "mean_abs_sv_pct": self.mean_abs_pct(),
            "threshold_pct": self.threshold,
            "angle_threshold_deg": self.angle_threshold,
            "rows": len(self.rows),
            "oracle_iterations": self.oracle_iterations,
            "reason": self.reason,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=1) + "\n"

    def plot_data(self) -> str:
        """``index,quantity,pct_diff`` lines for external charting."""
        lines = ["index,quantity,pct_diff"]
        lines += [f"{k},{r.key},{r.pct(self.floor):.6e}" for k, r in enumerate(self.rows)]
        return "\n".join(lines) + "\n"


def oracle_loads(attack, net: Network) -> tuple[Load, ...]:
    """Demand profile implied by the attacked injection readings.

    Each non-slack node-phase with injection readings gets a constant-power
    load equal to minus its metered injection. Shunts stay network elements
    and are not part of the meter value.
    """
    inj: dict[tuple[str, str], complex] = {}
    for r in attack.z_hat:
        if r.kind not in ("PI", "QI"):
            continue
        node = net.mapping.get(r.node, r.node)
        if net.grid.node(node).role == "slack":
            continue
        key = (node, r.phase)
        inj[key] = inj.get(key, 0j) + (r.value if r.kind == "PI" else 1j * r.value)
    return tuple(Load(n, p, -s.real * net.s_base, -s.imag * net.s_base) for (n, p), s in inj.items())


def assess(
    grid,
    attack,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    angle_threshold: float = ANGLE_THRESHOLD_DEG,
    floor: float = FLOOR_PU,
    tol: float = 1e-10,
) -> AssessmentReport:
    """Replay the attacked demand through the load flow and compare.

    Design values are the attacked readings and state; oracle values are
    what the load flow produces for the same demand. A non-converging
    oracle yields a detectable verdict with the reason recorded.
    """
    net = Network.of(grid)
    loads = oracle_loads(attack, net)
    base = dict(threshold=threshold, angle_threshold=angle_threshold, floor=floor, s_base=net.s_base)
    try:
        oracle = solve_loadflow(net, loads, tol=tol, max_iter=50)
    except LoadflowError as exc:
        return AssessmentReport([], reason=f"oracle load flow failed: {exc}", **base)
    model = MeasurementModel(net, attack.z_hat.readings)
    zn = model.h(oracle.state)
    design = attack.z_hat.as_dict()
    orc = {r.id: float(v) for r, v in zip(attack.z_hat.readings, zn)}
    units = {}
    xd, xo = attack.state, oracle.state
    for k, (node, ph) in enumerate(net.bus_phases):
        vk, tk = f"V_{node}_{ph}", f"theta_{node}_{ph}"
        design[vk], orc[vk] = float(xd.V[k]), float(xo.V[k])
        design[tk], orc[tk] = math.degrees(xd.theta[k]), math.degrees(xo.theta[k])
        units[tk] = "deg"
    rows = compare_sets(design, orc, units=units)
    return AssessmentReport(rows, oracle_iterations=oracle.iterations, **base)
