"""Constraint-based false data injection design.

Pipeline: grow an attack area from a seed node, list the state variables the
attacker may move, assemble the physical constraints that keep the area
consistent with the rest of the grid, solve them for a pseudo steady state
and translate that state into malicious meter values.

Every manipulated reading follows the additive rule

    z_hat = z + h(x_hat) - h(x)

restricted to readings inside the area, so the attack vector is exactly
the change of the measurement model between the genuine and the pseudo state.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from gridfdi.grid import PHASES, Grid
from gridfdi.powerflow import (
    MeasurementModel,
    MeasurementSet,
    Network,
    PhasorState,
    SteadyState,
    measure_all,
)

V_MARGIN = 0.01

KIND_ALIASES = {"v": "V", "vm": "V", "theta": "theta", "th": "theta", "angle": "theta", "a": "theta"}


class AttackError(RuntimeError):
    """Attack design failed; subclasses carry structured details."""


class AreaError(AttackError):
    pass


class DegreesOfFreedomError(AttackError):
    def __init__(self, message, n_constraints, n_free, suggestions=()):
        super().__init__(message)
        self.n_constraints = n_constraints
        self.n_free = n_free
        self.suggestions = tuple(suggestions)


class ConvergenceError(AttackError):
    pass


class BoundsError(AttackError):
    pass


# --------------------------------------------------------------------------
# state-variable handles


@dataclass(frozen=True, order=True)
class SV:
    """One state variable: ``kind`` is ``"V"`` or ``"theta"``."""

    node: str
    phase: str
    kind: str

    def __str__(self):
        return f"{self.kind}:{self.node}:{self.phase}"

    @classmethod
    def parse(cls, text: str, grid=None) -> "SV":
        """Accepts ``theta:652:a``, ``V:12:a`` or ``theta_a@652``.

        With a grid, node aliases and switch-merged ids resolve to the
        electrical node id.
        """
        t = text.strip()
        if "@" in t:
            left, node = t.split("@", 1)
            kind, _, phase = left.rpartition("_")
        else:
            parts = t.split(":")
            if len(parts) != 3:
                raise ValueError(f"bad state-variable handle {text!r} (expected kind:node:phase)")
            kind, node, phase = parts
        kind = KIND_ALIASES.get(kind.lower())
        if kind is None or phase not in PHASES:
            raise ValueError(f"bad state-variable handle {text!r}")
        if grid is not None:
            net = Network.of(grid)
            node = net.source.resolve(node)
            node = net.mapping.get(node, node)
            net.bp(node, phase)
        return cls(node, phase, kind)

    def column(self, net: Network) -> int:
        """Column in the full ``[theta, V]`` state layout."""
        k = net.bp(self.node, self.phase)
        return k if self.kind == "theta" else net.nb + k

    def get(self, state: PhasorState, net: Network) -> float:
        k = net.bp(self.node, self.phase)
        return float(state.theta[k] if self.kind == "theta" else state.V[k])

    def set(self, state: PhasorState, net: Network, value: float) -> None:
        k = net.bp(self.node, self.phase)
        if self.kind == "theta":
            state.theta[k] = value
        else:
            state.V[k] = value

    def display(self, value: float) -> float:
        return math.degrees(value) if self.kind == "theta" else value

    @property
    def unit(self) -> str:
        return "deg" if self.kind == "theta" else "pu"


def _sv_list(items, grid) -> list[SV]:
    return [s if isinstance(s, SV) else SV.parse(s, grid) for s in items]


# --------------------------------------------------------------------------
# attack areas


@dataclass(frozen=True)
class AttackArea:
    seed: str
    members: frozenset  # of (node, phase)
    boundary: frozenset
    zero_injection: frozenset
    launch_candidates: tuple[str, ...]
    branches: tuple[str, ...]
    touches_slack: bool = False

    @property
    def area_type(self) -> str:
        return "a2" if self.zero_injection else "a1"

    @property
    def nodes(self) -> frozenset:
        return frozenset(n for n, _ in self.members)

    def phases_of(self, node: str) -> str:
        return "".join(p for p in PHASES if (node, p) in self.members)

    def describe(self, grid=None) -> str:
        order = _node_order(grid) if grid is not None else {}
        nodes = sorted(self.nodes, key=lambda n: (order.get(n, 0), n))
        return " ".join(f"{n}{self.phases_of(n)}" for n in nodes)

    def as_dict(self, grid=None) -> dict:
        order = _node_order(grid) if grid is not None else {}
        key = lambda n: (order.get(n, 0), n)  # noqa: E731
        return {
            "seed": self.seed,
            "type": self.area_type,
            "members": {n: self.phases_of(n) for n in sorted(self.nodes, key=key)},
            "boundary": sorted(self.boundary, key=key),
            "zero_injection": sorted(self.zero_injection, key=key),
            "launch_candidates": list(self.launch_candidates),
            "branches": list(self.branches),
            "touches_slack": self.touches_slack,
        }


def _node_order(grid) -> dict[str, int]:
    net = Network.of(grid)
    return {n.id: k for k, n in enumerate(net.grid.nodes)}


def find_attack_areas(grid, initial: str) -> AttackArea:
    """Grow the attack area around ``initial``.

    Expansion follows every branch phase with nonzero self-impedance. A
    zero-injection neighbour joins the interior (with all its phases, since
    mutual coupling ties them together) and is expanded in turn; a neighbour
    with power injection joins on the connecting phases and stops the
    growth there. Injection nodes with a branch leaving the area form the
    boundary. A slack node reached this way is kept on the boundary and
    flagged through ``touches_slack``.
    """
    net = Network.of(grid)
    g = net.grid
    try:
        seed = net.source.resolve(initial)
    except KeyError:
        raise AreaError(f"unknown node {initial!r}") from None
    seed = net.mapping.get(seed, seed)
    if g.node(seed).role == "slack":
        raise AreaError(f"seed {initial} is the slack node; its state is pinned, so no area can be launched from it")

    members: set[tuple[str, str]] = {(seed, p) for p in g.node(seed).phases}
    interior = [seed]
    expanded: set[str] = set()
    in_branches: list[str] = []
    while interior:
        u = interior.pop(0)
        if u in expanded:
            continue
        expanded.add(u)
        for b in g.branches_at(u):
            live = [p for p in b.phases if b.z[PHASES.index(p), PHASES.index(p)] != 0 or b.kind == "switch"]
            if not live:
                continue
            v = b.other(u)
            if b.id not in in_branches:
                in_branches.append(b.id)
            node = g.node(v)
            if node.role == "zero":
                members.update((v, p) for p in node.phases)
                if v not in expanded:
                    interior.append(v)
            else:
                members.update((v, p) for p in live)

    in_nodes = {n for n, _ in members}
    branch_set = set(in_branches)
    boundary = set()
    for n in in_nodes:
        if g.node(n).role == "zero":
            continue
        if any(b.id not in branch_set for b in g.branches_at(n)):
            boundary.add(n)
    zero = {n for n in in_nodes if g.node(n).role == "zero"}
    order = _node_order(g)
    launch = tuple(
        sorted(
            (n for n in in_nodes if n not in boundary and g.node(n).role == "injection"),
            key=lambda n: order[n],
        )
    )
    touches_slack = any(g.node(n).role == "slack" for n in in_nodes)
    return AttackArea(
        seed=seed,
        members=frozenset(members),
        boundary=frozenset(boundary),
        zero_injection=frozenset(zero),
        launch_candidates=launch,
        branches=tuple(b.id for b in g.branches if b.id in branch_set),
        touches_slack=touches_slack,
    )


def find_all_attack_areas(grid) -> list[AttackArea]:
    """Sweep every non-slack node as seed; identical areas are reported once."""
    net = Network.of(grid)
    seen: dict[frozenset, AttackArea] = {}
    for node in net.grid.nodes:
        if node.role == "slack":
            continue
        area = find_attack_areas(net, node.id)
        seen.setdefault(area.members, area)
    return list(seen.values())


def changeable_state_variables(area: AttackArea, grid) -> list[SV]:
    """Two SVs per member node-phase minus slack, PV magnitudes and boundary nodes."""
    net = Network.of(grid)
    g = net.grid
    out = []
    for node in g.nodes:
        if node.id not in area.nodes or node.id in area.boundary or node.role == "slack":
            continue
        for p in area.phases_of(node.id):
            if not node.is_pv:
                out.append(SV(node.id, p, "V"))
            out.append(SV(node.id, p, "theta"))
    if not out:
        raise AreaError("attack area has no changeable state variables")
    return out


# --------------------------------------------------------------------------
# constraints


@dataclass
class ConstraintSystem:
    """Zero-injection and change-sum residuals over terminal powers.

    Each row is ``coeff @ S_terminal`` (real part for P rows, imaginary for
    Q rows) minus its steady-state value for change-sum rows.
    """

    labels: list[str]
    families: list[str]  # "zero" | "sum"
    coeffs: np.ndarray  # rows x terminals
    reactive: np.ndarray  # bool per row
    offset: np.ndarray
    independent: tuple[int, ...]
    variables: list[SV]
    network: Network

    def __len__(self):
        return len(self.labels)

    def residual(self, state: PhasorState) -> np.ndarray:
        s = self.network.terminal_power(state.complex)
        val = self.coeffs @ s
        return np.where(self.reactive, val.imag, val.real) - self.offset

    def jacobian(self, state: PhasorState, svs: Sequence[SV] | None = None) -> np.ndarray:
        net = self.network
        svs = self.variables if svs is None else svs
        ds_dth, ds_dvm = net.terminal_derivatives(state.complex)
        full = self.coeffs @ np.hstack([ds_dth, ds_dvm])
        full = np.where(self.reactive[:, None], full.imag, full.real)
        return full[:, [sv.column(net) for sv in svs]]

    @property
    def dropped(self) -> list[str]:
        keep = set(self.independent)
        return [lab for k, lab in enumerate(self.labels) if k not in keep]


def build_constraints(area: AttackArea, steady: SteadyState, grid=None, *, drop_tol: float = 1e-10) -> ConstraintSystem:
    """Assemble the per-phase constraint rows for an area.

    Zero-injection rows: the algebraic sum of flows leaving each zero
    injection node-phase. Change-sum rows, one per phase and P/Q: changes of
    the in-area consumption at every injection node plus changes of every
    in-area branch loss. Rows are then screened for independence at the
    steady state; zero-injection rows are preferred when a choice exists.
    """
    net = steady.network if grid is None else Network.of(grid)
    g = net.grid
    variables = changeable_state_variables(area, net)
    branch_set = set(area.branches)
    labels, families, rows, reactive = [], [], [], []

    for node in g.nodes:
        if node.id not in area.zero_injection:
            continue
        for p in node.phases:
            row = np.zeros(net.nt)
            for k, t in enumerate(net.terminals):
                if t.node == node.id and t.phase == p:
                    row[k] = 1.0
            for q, tag in ((False, "P"), (True, "Q")):
                labels.append(f"zero:{tag}:{node.id}:{p}")
                families.append("zero")
                rows.append(row)
                reactive.append(q)

    if area.zero_injection:
        phases = [p for p in PHASES if any((n, p) in area.members for n in area.nodes)]
        for p in phases:
            row = np.zeros(net.nt)
            for k, t in enumerate(net.terminals):
                if t.branch not in branch_set or t.phase != p:
                    continue
                row[k] += 1.0  # loss = from + to
                if g.node(t.node).role != "zero":
                    row[k] -= 1.0  # consumption change = -(in-area outflow change)
            for q, tag in ((False, "P"), (True, "Q")):
                labels.append(f"sum:{tag}:{p}")
                families.append("sum")
                rows.append(row)
                reactive.append(q)

    coeffs = np.array(rows).reshape(len(rows), net.nt).astype(complex)
    reactive = np.array(reactive, dtype=bool)
    s0 = net.terminal_power(steady.state.complex)
    val0 = coeffs @ s0
    base = np.where(reactive, val0.imag, val0.real)
    offset = np.where(np.array(families) == "sum", base, 0.0)
    system = ConstraintSystem(labels, families, coeffs, reactive, offset, (), variables, net)
    if len(labels):
        jac = system.jacobian(steady.state)
        if not np.all(np.isfinite(jac)):
            raise AttackError("constraint Jacobian is not finite; cannot decide row independence")
        system.independent = _independent_rows(jac, drop_tol)
    return system


def _independent_rows(jac: np.ndarray, drop_tol: float) -> tuple[int, ...]:
    scale = float(np.abs(jac).max()) if jac.size else 0.0
    keep: list[int] = []
    if scale == 0.0:
        return ()
    for k in range(jac.shape[0]):
        trial = jac[keep + [k]] / scale
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] > drop_tol * max(s[0], 1.0):
            keep.append(k)
    return tuple(keep)


def default_bounds(steady: SteadyState, svs: Iterable[SV]) -> dict[SV, tuple[float, float]]:
    """V in [0.95, 1.05] pu, theta within 10 deg of steady.

    Where the steady magnitude already sits near or past a limit (the
    regulated bus runs at ~1.07 pu) the band is widened to V0 +- 0.01 so the
    steady state stays strictly inside.
    """
    net = steady.network
    out = {}
    for sv in svs:
        v0 = sv.get(steady.state, net)
        if sv.kind == "V":
            out[sv] = (min(0.95, v0 - V_MARGIN), max(1.05, v0 + V_MARGIN))
        else:
            out[sv] = (v0 - math.radians(10.0), v0 + math.radians(10.0))
    return out


def suggest_fixed_sets(
    system: ConstraintSystem, state: PhasorState, init: SV, limit: int = 5, max_combinations: int = 100_000
) -> list[list[SV]]:
    """Fixed-SV sets that leave a square, well-conditioned system.

    Columns of the independent constraint Jacobian are tried in every
    combination; the best conditioned ones come first.
    """
    rows = list(system.independent)
    pool = [sv for sv in system.variables if sv != init]
    r = len(rows)
    if r == 0 or r > len(pool):
        return []
    jac = system.jacobian(state, pool)[rows]
    if math.comb(len(pool), r) > max_combinations:
        # too many to enumerate: one pick by column-pivoted QR
        _, _, piv = scipy.linalg.qr(jac, pivoting=True)
        free = set(piv[:r].tolist())
        return [[pool[k] for k in range(len(pool)) if k not in free]]
    scored = []
    for free in itertools.combinations(range(len(pool)), r):
        cond = np.linalg.cond(jac[:, free])
        if np.isfinite(cond) and cond < 1e10:
            fixed = [pool[k] for k in range(len(pool)) if k not in free]
            scored.append((cond, fixed))
    scored.sort(key=lambda t: t[0])
    return [f for _, f in scored[:limit]]


# --------------------------------------------------------------------------
# results


@dataclass
class AttackResult:
    area: AttackArea
    steady: SteadyState
    state: PhasorState  # x_hat
    z: MeasurementSet  # genuine readings
    z_hat: MeasurementSet
    initialization: list[tuple[SV, float]]
    fixed: list[SV]
    variables: list[SV]
    diagnostics: dict = field(default_factory=dict)

    @property
    def network(self) -> Network:
        return self.steady.network

    def state_rows(self) -> list[tuple[SV, float, float]]:
        net = self.network
        return [(sv, sv.get(self.steady.state, net), sv.get(self.state, net)) for sv in self.variables]

    def deltas(self) -> dict[str, float]:
        base = self.z.as_dict()
        return {r.id: r.value - base[r.id] for r in self.z_hat}

    def changed_ids(self) -> list[str]:
        base = self.z.as_dict()
        return [r.id for r in self.z_hat if r.value != base[r.id]]

    def to_json(self) -> str:
        net = self.network
        st0, st1 = self.steady.state, self.state
        base = self.z.as_dict()
        doc = {
            "grid": net.source.name,
            "area": self.area.as_dict(net),
            "initialization": [{"sv": str(sv), "delta": d} for sv, d in self.initialization],
            "fixed": [str(sv) for sv in self.fixed],
            "variables": [str(sv) for sv in self.variables],
            "state": [
                {
                    "node": n,
                    "phase": p,
                    "V": [float(st0.V[k]), float(st1.V[k])],
                    "theta": [float(st0.theta[k]), float(st1.theta[k])],
                }
                for k, (n, p) in enumerate(net.bus_phases)
            ],
            "measurements": [
                {
                    "id": r.id,
                    "kind": r.kind,
                    "branch": r.branch,
                    "from": r.frm,
                    "to": r.to,
                    "node": r.node,
                    "phase": r.phase,
                    "sigma": r.sigma,
                    "steady": base[r.id],
                    "attacked": r.value,
                    "delta": r.value - base[r.id],
                }
                for r in self.z_hat
            ],
            "loads": [[ld.node, ld.phase, ld.p, ld.q] for ld in self.steady.loads],
            "diagnostics": self.diagnostics,
        }
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str, grid) -> "AttackResult":
        from gridfdi.grid import Load
        from gridfdi.powerflow import Reading

        doc = json.loads(text)
        net = Network.of(grid)
        st0, st1 = net.flat_state(), net.flat_state()
        for row in doc["state"]:
            k = net.bp(row["node"], row["phase"])
            st0.V[k], st1.V[k] = row["V"]
            st0.theta[k], st1.theta[k] = row["theta"]
        loads = tuple(Load(n, p, P, Q) for n, p, P, Q in doc.get("loads", []))
        steady = SteadyState(net, st0, loads or net.grid.loads)
        z, zh = [], []
        for m in doc["measurements"]:
            r = Reading(m["id"], m["kind"], m["steady"], m["sigma"], m["branch"], m["from"], m["to"], m["node"], m["phase"])
            z.append(r)
            zh.append(r.with_value(m["attacked"]))
        a = doc["area"]
        members = frozenset((n, p) for n, ph in a["members"].items() for p in ph)
        area = AttackArea(
            a["seed"], members, frozenset(a["boundary"]), frozenset(a["zero_injection"]),
            tuple(a["launch_candidates"]), tuple(a["branches"]), a.get("touches_slack", False),
        )
        return cls(
            area=area,
            steady=steady,
            state=st1,
            z=MeasurementSet(tuple(z)),
            z_hat=MeasurementSet(tuple(zh)),
            initialization=[(SV.parse(i["sv"]), i["delta"]) for i in doc["initialization"]],
            fixed=[SV.parse(s) for s in doc["fixed"]],
            variables=[SV.parse(s) for s in doc.get("variables", [])],
            diagnostics=doc.get("diagnostics", {}),
        )


def _in_area_reading(r, area: AttackArea, net: Network) -> bool:
    if r.kind in ("PF", "QF"):
        return r.branch in area.branches
    if r.kind in ("PI", "QI"):
        node = net.mapping.get(r.node, r.node)
        return node in area.nodes and net.grid.node(node).role != "zero"
    return False


def malicious_measurements(area: AttackArea, steady: SteadyState, state: PhasorState, z: MeasurementSet | None = None) -> MeasurementSet:
    """Apply ``h(x_hat) - h(x)`` to every in-area reading of ``z``; copy the rest."""
    net = steady.network
    z = measure_all(steady) if z is None else z
    model = MeasurementModel(net, z.readings)
    delta = model.h(state) - model.h(steady.state)
    changes = {r.id: r.value + d for r, d in zip(z.readings, delta) if _in_area_reading(r, area, net) and d != 0.0}
    return z.updated(changes)


def _check_bounds(values: dict[SV, float], bounds: dict[SV, tuple[float, float]]):
    bad = [sv for sv, v in values.items() if not (bounds[sv][0] - 1e-12 <= v <= bounds[sv][1] + 1e-12)]
    if bad:
        raise BoundsError("out of bounds: " + ", ".join(str(sv) for sv in bad))


def design_attack_a2(
    area: AttackArea,
    steady: SteadyState,
    grid=None,
    *,
    init: tuple[SV | str, float],
    fixed: Sequence[SV | str],
    bounds: dict[SV, tuple[float, float]] | None = None,
    z: MeasurementSet | None = None,
    tol: float = 1e-11,
    max_iter: int = 50,
) -> AttackResult:
    """Solve the independent constraint rows for the free SVs.

    ``init`` is ``(sv, delta)`` with delta in pu or radians. The free set is
    the changeable SVs minus ``init`` and ``fixed``; its size must equal
    the number of independent constraints.
    """
    net = steady.network if grid is None else Network.of(grid)
    system = build_constraints(area, steady, net)
    variables = system.variables
    init_sv = init[0] if isinstance(init[0], SV) else SV.parse(init[0], net)
    delta = float(init[1])
    fixed = _sv_list(fixed, net)
    unknown = [sv for sv in [init_sv, *fixed] if sv not in variables]
    if unknown:
        raise AttackError("not changeable in this area: " + ", ".join(map(str, unknown)))
    if init_sv in fixed or len(set(fixed)) != len(fixed):
        raise AttackError("initialized and fixed SVs must be distinct")
    free = [sv for sv in variables if sv != init_sv and sv not in fixed]
    rows = list(system.independent)
    if len(rows) != len(free):
        raise DegreesOfFreedomError(
            f"{len(rows)} independent constraints but {len(free)} free state variables "
            f"({len(variables)} changeable, 1 initialized, {len(fixed)} fixed)",
            len(rows),
            len(free),
            suggest_fixed_sets(system, steady.state, init_sv),
        )
    bounds = {**default_bounds(steady, variables), **(bounds or {})}

    x = steady.state.copy()
    init_sv.set(x, net, init_sv.get(x, net) + delta)
    _check_bounds({init_sv: init_sv.get(x, net)}, bounds)
    lo = np.array([bounds[sv][0] for sv in free])
    hi = np.array([bounds[sv][1] for sv in free])

    def values(st):
        return np.array([sv.get(st, net) for sv in free])

    def assign(st, vec):
        out = st.copy()
        for sv, v in zip(free, vec):
            sv.set(out, net, v)
        return out

    r = system.residual(x)[rows]
    err = float(np.max(np.abs(r))) if r.size else 0.0
    it = 0
    while err > tol:
        if it >= max_iter:
            raise ConvergenceError(f"constraint solve did not converge in {max_iter} iterations (residual {err:.3e})")
        jac = system.jacobian(x, free)[rows]
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular constraint Jacobian; choose a different fixed set") from None
        cur = values(x)
        alpha = 1.0
        for _ in range(30):
            trial_vals = np.clip(cur + alpha * step, lo, hi)
            trial = assign(x, trial_vals)
            r_new = system.residual(trial)[rows]
            err_new = float(np.max(np.abs(r_new)))
            if err_new < err:
                break
            alpha *= 0.5
        else:
            raise BoundsError(f"no feasible descent inside the bounds (residual {err:.3e})")
        x, r, err = trial, r_new, err_new
        it += 1

    final = values(x)
    binding = [str(sv) for sv, v, a, b in zip(free, final, lo, hi) if v <= a or v >= b]
    if binding and err > tol:
        raise BoundsError("bounds binding at solution: " + ", ".join(binding))
    full = system.residual(x)
    diagnostics = {
        "type": "a2",
        "iterations": it,
        "residual": err,
        "max_residual_all_rows": float(np.max(np.abs(full))) if full.size else 0.0,
        "constraints": system.labels,
        "independent": [system.labels[k] for k in rows],
        "dropped": system.dropped,
        "free": [str(sv) for sv in free],
        "binding_bounds": binding,
    }
    z_hat = malicious_measurements(area, steady, x, z)
    return AttackResult(
        area=area,
        steady=steady,
        state=x,
        z=measure_all(steady) if z is None else z,
        z_hat=z_hat,
        initialization=[(init_sv, delta)],
        fixed=fixed,
        variables=variables,
        diagnostics=diagnostics,
    )


def design_attack_a1(
    area: AttackArea,
    steady: SteadyState,
    grid=None,
    *,
    assignments: dict[SV | str, float],
    bounds: dict[SV, tuple[float, float]] | None = None,
    z: MeasurementSet | None = None,
    relative: bool = False,
) -> AttackResult:
    """Move launch-node SVs directly and re-meter the surrounding readings.

    ``assignments`` map SVs to new absolute values (or to deltas when
    ``relative``). Changes on branch phases are absorbed by the injection
    meters of the nodes at both ends; the boundary node's state stays put.
    """
    net = steady.network if grid is None else Network.of(grid)
    if area.area_type != "a1":
        raise AttackError("design_attack_a1 needs an a1 area (no zero-injection nodes)")
    variables = changeable_state_variables(area, net)
    assignments = {(k if isinstance(k, SV) else SV.parse(k, net)): float(v) for k, v in assignments.items()}
    bad = [sv for sv in assignments if sv not in variables]
    if bad:
        raise AttackError("not changeable in this area: " + ", ".join(map(str, bad)))
    bounds = {**default_bounds(steady, variables), **(bounds or {})}
    x = steady.state.copy()
    init = []
    for sv, v in assignments.items():
        v0 = sv.get(x, net)
        new = v0 + v if relative else v
        init.append((sv, new - v0))
        sv.set(x, net, new)
    _check_bounds({sv: sv.get(x, net) for sv in assignments}, bounds)
    _check_absorbers(area, steady, x)
    z_hat = malicious_measurements(area, steady, x, z)
    return AttackResult(
        area=area,
        steady=steady,
        state=x,
        z=measure_all(steady) if z is None else z,
        z_hat=z_hat,
        initialization=init,
        fixed=[],
        variables=variables,
        diagnostics={"type": "a1", "iterations": 0, "residual": 0.0},
    )


def _check_absorbers(area: AttackArea, steady: SteadyState, state: PhasorState):
    """Each changed in-area terminal flow needs an injection meter on that phase."""
    net = steady.network
    g = net.grid
    ds = net.terminal_power(state.complex) - net.terminal_power(steady.state.complex)
    for k, t in enumerate(net.terminals):
        if ds[k] != 0 and t.branch in area.branches:
            node = g.node(t.node)
            if node.role == "zero" or t.phase not in node.phases:
                raise AttackError(f"change on {t.branch} phase {t.phase} has no injection meter to absorb it at {t.node}")


# --------------------------------------------------------------------------
# DC baseline


@dataclass
class DCModel:
    """Linearised active-power model of a grid at the flat, lossless state."""

    h: np.ndarray
    ids: list[str]
    columns: list[tuple[str, str]]

    def select(self, z: MeasurementSet) -> np.ndarray:
        d = z.as_dict()
        return np.array([d[i] for i in self.ids])


def dc_model(grid) -> DCModel:
    """H = dP/dtheta of a resistance-free copy of ``grid`` at flat voltages.

    Rows are the PF and PI readings of :func:`measure_all`'s layout, columns
    the non-slack angles.
    """
    from dataclasses import replace as dreplace

    from gridfdi.powerflow import measurement_layout

    net = Network.of(grid)
    src = net.grid
    lossless = Grid(
        src.s_base,
        src.nodes,
        tuple(dreplace(b, z=1j * b.z.imag) for b in src.branches),
        src.loads,
        (),
        name=src.name + "-dc",
    )
    ln = Network.of(lossless)
    layout = [r for r in measurement_layout(lossless) if r.kind in ("PF", "PI")]
    model = MeasurementModel(ln, layout)
    flat = ln.flat_state()
    flat.V[:] = 1.0
    full = model.jacobian(flat)
    cols = np.flatnonzero(~ln.is_slack)
    return DCModel(full[:, cols], [r.id for r in layout], [ln.bus_phases[k] for k in cols])


def dc_attack_baseline(h_matrix: np.ndarray, z: np.ndarray, x: np.ndarray | None = None, c: np.ndarray | None = None) -> np.ndarray:
    """Classic linear attack: ``z + H c``.

    ``x`` (the pre-attack state) is accepted for symmetry with the linear
    estimator; the residual ``z - H x`` is unchanged when the estimate
    moves to ``x + c``.
    """
    h = np.asarray(h_matrix, dtype=float)
    z = np.asarray(z, dtype=float)
    c = np.zeros(h.shape[1]) if c is None else np.asarray(c, dtype=float)
    if h.ndim != 2 or z.shape != (h.shape[0],) or c.shape != (h.shape[1],):
        raise ValueError(f"dimension mismatch: H {h.shape}, z {z.shape}, c {c.shape}")
    if x is not None and np.asarray(x).shape != (h.shape[1],):
        raise ValueError(f"dimension mismatch: H {h.shape}, x {np.asarray(x).shape}")
    return z + h @ c


def apply_dc_attack(z: MeasurementSet, model: DCModel, c: np.ndarray) -> MeasurementSet:
    """Replace the active-power readings of ``z`` by ``z_P + H c``."""
    attacked = dc_attack_baseline(model.h, model.select(z), None, c)
    return z.updated(dict(zip(model.ids, attacked)))
