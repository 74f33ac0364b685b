"""Three-phase measurement functions and the unbalanced Newton load flow.

All internal quantities are per unit on the grid's per-phase power base and
each node's line-to-neutral voltage base. Power injections follow the
generator convention (power delivered into the network is positive), so a
load of 100 kW shows up as an injection reading of -100 kW.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import weakref
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from gridfdi.grid import PHASES, Grid, Load, merge_switches

log = logging.getLogger(__name__)

PHASE_OFFSET = {"a": 0.0, "b": -2.0 * math.pi / 3.0, "c": 2.0 * math.pi / 3.0}
KINDS = ("PF", "QF", "PI", "QI", "VM", "VA")


class LoadflowError(RuntimeError):
    """Newton load flow failed to converge."""

    def __init__(self, message, iterations=0, mismatch=float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.mismatch = mismatch


class SingularJacobianError(LoadflowError):
    def __init__(self, message, rank_deficiency):
        super().__init__(message)
        self.rank_deficiency = rank_deficiency


# --------------------------------------------------------------------------
# compiled network


@dataclass(frozen=True)
class Terminal:
    branch: str
    end: str  # "from" | "to"
    node: str  # measuring node
    other: str
    phase: str


_NETWORK_CACHE: "weakref.WeakKeyDictionary[Grid, Network]" = weakref.WeakKeyDictionary()


class Network:
    """Index and admittance data compiled from a :class:`Grid`.

    Switches are merged first; ``mapping`` sends original node ids to the
    electrical node that represents them.
    """

    def __init__(self, grid: Grid):
        self.source = grid
        self.grid, self.mapping = merge_switches(grid)
        g = self.grid
        self.s_base = g.s_base
        self.bus_phases: tuple[tuple[str, str], ...] = tuple((n.id, p) for n in g.nodes for p in n.phases)
        self.index = {bp: k for k, bp in enumerate(self.bus_phases)}
        nb = self.nb = len(self.bus_phases)
        self.vbase = np.array([g.node(n).vbase for n, _ in self.bus_phases])
        self.offset = np.array([PHASE_OFFSET[p] for _, p in self.bus_phases])
        self.is_slack = np.array([g.node(n).role == "slack" for n, _ in self.bus_phases])
        self.is_pv = np.array([g.node(n).is_pv for n, _ in self.bus_phases])
        self.vset = np.array([g.node(n).vset or 1.0 for n, _ in self.bus_phases])

        self.blocks: dict[str, tuple[np.ndarray, ...]] = {}
        terminals: list[Terminal] = []
        rows = []
        for b in g.branches:
            zb = b.z * g.s_base / g.node(b.from_node).vbase ** 2
            idx = [PHASES.index(p) for p in b.phases]
            y = np.zeros((3, 3), dtype=complex)
            y[np.ix_(idx, idx)] = np.linalg.inv(zb[np.ix_(idx, idx)])
            # ideal ratio T on the from side: V_to = T V_from at no load
            t = np.diag(b.tap_vector())
            th = t.conj().T
            yff, yft, ytf, ytt = th @ y @ t, -th @ y, -y @ t, y
            self.blocks[b.id] = (yff, yft, ytf, ytt)
            for end, node, other, ys, ym in (
                ("from", b.from_node, b.to_node, yff, yft),
                ("to", b.to_node, b.from_node, ytt, ytf),
            ):
                for p in b.phases:
                    i = PHASES.index(p)
                    row = np.zeros(nb, dtype=complex)
                    for l in b.phases:
                        j = PHASES.index(l)
                        row[self.index[(node, l)]] += ys[i, j]
                        row[self.index[(other, l)]] += ym[i, j]
                    terminals.append(Terminal(b.id, end, node, other, p))
                    rows.append(row)
        self.terminals = tuple(terminals)
        self.term_index = {(t.branch, t.end, t.phase): k for k, t in enumerate(terminals)}
        nt = self.nt = len(terminals)
        self.yrow = np.array(rows).reshape(nt, nb)
        self.term_bp = np.array([self.index[(t.node, t.phase)] for t in terminals], dtype=int)
        self.sel = np.zeros((nt, nb))
        self.sel[np.arange(nt), self.term_bp] = 1.0
        self.cinj = self.sel.T.copy()

        self.ysh = np.zeros(nb, dtype=complex)
        for sh in g.shunts:
            # capacitor rated q VAr at 1 pu: consumption |V|^2 conj(y) = -j q |V|^2
            self.ysh[self.index[(sh.node, sh.phase)]] += 1j * sh.q / g.s_base

    @classmethod
    def of(cls, grid: "Grid | Network") -> "Network":
        if isinstance(grid, Network):
            return grid
        net = _NETWORK_CACHE.get(grid)
        if net is None:
            net = _NETWORK_CACHE[grid] = cls(grid)
        return net

    def bp(self, node: str, phase: str) -> int:
        node = self.mapping.get(node, node)
        try:
            return self.index[(node, phase)]
        except KeyError:
            raise KeyError(f"node {node} has no phase {phase}") from None

    def load_vector(self, loads: Iterable[Load]) -> np.ndarray:
        s = np.zeros(self.nb, dtype=complex)
        for ld in loads:
            s[self.bp(ld.node, ld.phase)] += complex(ld.p, ld.q) / self.s_base
        return s

    def flat_state(self) -> "PhasorState":
        v = np.where(self.is_slack | self.is_pv, self.vset, 1.0)
        return PhasorState(self.bus_phases, v.astype(float), self.offset.copy())

    # -- vectorised measurement functions ---------------------------------

    def terminal_power(self, vc: np.ndarray) -> np.ndarray:
        return vc[self.term_bp] * np.conj(self.yrow @ vc)

    def injection_power(self, vc: np.ndarray) -> np.ndarray:
        return self.cinj @ self.terminal_power(vc) + np.abs(vc) ** 2 * np.conj(self.ysh)

    def terminal_derivatives(self, vc: np.ndarray):
        """dS/dtheta and dS/d|V| of every terminal power (nt x nb each)."""
        i = self.yrow @ vc
        vt = vc[self.term_bp]
        vnorm = vc / np.abs(vc)
        ds_dth = -1j * vt[:, None] * np.conj(self.yrow) * np.conj(vc)[None, :]
        ds_dth += 1j * (np.conj(i) * vt)[:, None] * self.sel
        ds_dvm = vt[:, None] * np.conj(self.yrow) * np.conj(vnorm)[None, :]
        ds_dvm += (np.conj(i) * vnorm[self.term_bp])[:, None] * self.sel
        return ds_dth, ds_dvm

    def injection_derivatives(self, vc: np.ndarray):
        ds_dth, ds_dvm = self.terminal_derivatives(vc)
        di_dth = self.cinj @ ds_dth
        di_dvm = self.cinj @ ds_dvm + np.diag(2.0 * np.abs(vc) * np.conj(self.ysh))
        return di_dth, di_dvm


# --------------------------------------------------------------------------
# state


@dataclass
class PhasorState:
    """Per node-phase voltage magnitude (pu) and angle (rad)."""

    bus_phases: tuple[tuple[str, str], ...]
    V: np.ndarray
    theta: np.ndarray
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self._index is None:
            self._index = {bp: k for k, bp in enumerate(self.bus_phases)}

    @property
    def complex(self) -> np.ndarray:
        return self.V * np.exp(1j * self.theta)

    def k(self, node: str, phase: str) -> int:
        return self._index[(node, phase)]

    def magnitude(self, node: str, phase: str) -> float:
        return float(self.V[self.k(node, phase)])

    def angle(self, node: str, phase: str) -> float:
        return float(self.theta[self.k(node, phase)])

    def angle_deg(self, node: str, phase: str) -> float:
        return math.degrees(self.angle(node, phase))

    def copy(self) -> "PhasorState":
        return PhasorState(self.bus_phases, self.V.copy(), self.theta.copy(), self._index)

    def get(self, node: str, phase: str, kind: str) -> float:
        return self.magnitude(node, phase) if kind == "V" else self.angle(node, phase)

    def set(self, node: str, phase: str, kind: str, value: float) -> None:
        k = self.k(node, phase)
        if kind == "V":
            self.V[k] = value
        else:
            self.theta[k] = value


# --------------------------------------------------------------------------
# scalar measurement functions


def branch_flow(state: PhasorState, grid, branch: str, terminal: str, phase: str) -> tuple[float, float]:
    """Active and reactive power (pu) entering ``branch`` at ``terminal`` on ``phase``.

    Evaluated term by term over the coupled phases::

        P = sum_l Vi^ph Vi^l [Gs cos(ti^ph - ti^l) + Bs sin(ti^ph - ti^l)]
          + sum_l Vi^ph Vj^l [Gm cos(ti^ph - tj^l) + Bm sin(ti^ph - tj^l)]
        Q = sum_l Vi^ph Vi^l [Gs sin(...) - Bs cos(...)] + sum_l Vi^ph Vj^l [Gm sin(...) - Bm cos(...)]

    where ``Gs + jBs`` is the terminal's self admittance block and
    ``Gm + jBm`` the transfer block (``-Y`` for an untapped branch).
    """
    net = Network.of(grid)
    b = net.grid.branch(branch)
    if phase not in b.phases:
        raise KeyError(f"branch {branch} has no phase {phase}")
    yff, yft, ytf, ytt = net.blocks[branch]
    if terminal == "from":
        i, j, ys, ym = b.from_node, b.to_node, yff, yft
    elif terminal == "to":
        i, j, ys, ym = b.to_node, b.from_node, ytt, ytf
    else:
        raise ValueError("terminal must be 'from' or 'to'")
    r = PHASES.index(phase)
    vi, ti = state.magnitude(i, phase), state.angle(i, phase)
    p = q = 0.0
    for l in b.phases:
        c = PHASES.index(l)
        for node, blk in ((i, ys), (j, ym)):
            g, bb = blk[r, c].real, blk[r, c].imag
            vl, tl = state.magnitude(node, l), state.angle(node, l)
            d = ti - tl
            p += vi * vl * (g * math.cos(d) + bb * math.sin(d))
            q += vi * vl * (g * math.sin(d) - bb * math.cos(d))
    return p, q


def node_injection(state: PhasorState, grid, node: str, phase: str) -> tuple[float, float]:
    """Net injection (pu) at a node-phase: incident branch flows plus shunt consumption."""
    net = Network.of(grid)
    node = net.mapping.get(node, node)
    if phase not in net.grid.node(node).phases:
        raise KeyError(f"node {node} has no phase {phase}")
    p = q = 0.0
    for b in net.grid.branches_at(node):
        if phase in b.phases:
            dp, dq = branch_flow(state, net, b.id, "from" if b.from_node == node else "to", phase)
            p += dp
            q += dq
    k = net.bp(node, phase)
    sh = state.V[k] ** 2 * np.conj(net.ysh[k])
    return p + sh.real, q + sh.imag


# --------------------------------------------------------------------------
# load flow


@dataclass
class SteadyState:
    network: Network
    state: PhasorState
    loads: tuple[Load, ...]
    iterations: int = 0
    mismatch: float = 0.0

    @property
    def terminal_power(self) -> np.ndarray:
        return self.network.terminal_power(self.state.complex)

    @property
    def injection_power(self) -> np.ndarray:
        return self.network.injection_power(self.state.complex)

    def flow(self, branch: str, terminal: str, phase: str) -> complex:
        return complex(self.terminal_power[self.network.term_index[(branch, terminal, phase)]])

    def injection(self, node: str, phase: str) -> complex:
        return complex(self.injection_power[self.network.bp(node, phase)])

    def loss(self, branch: str, phase: str) -> complex:
        return self.flow(branch, "from", phase) + self.flow(branch, "to", phase)

    def losses(self) -> dict[tuple[str, str], complex]:
        g = self.network.grid
        return {(b.id, p): self.loss(b.id, p) for b in g.branches for p in b.phases}


def _unknowns(net: Network):
    ang = np.flatnonzero(~net.is_slack)
    mag = np.flatnonzero(~net.is_slack & ~net.is_pv)
    return ang, mag


def solve_loadflow(
    grid,
    loads: Iterable[Load] | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 30,
    init: PhasorState | None = None,
    pv_setpoints: dict[tuple[str, str], float] | None = None,
) -> SteadyState:
    """Full Newton-Raphson on the per-phase injection mismatches.

    Loads are constant power (SI units, consumption positive); a negative
    load is generation. Slack phases are pinned at their setpoint with
    0/-120/+120 degree offsets; PV node-phases keep their magnitude.

    Raises
    ------
    LoadflowError
        If the mismatch is not below ``tol`` (pu) after ``max_iter`` steps.
    SingularJacobianError
        If the Jacobian loses rank.
    """
    net = Network.of(grid)
    loads = tuple(net.grid.loads if loads is None else loads)
    target = -net.load_vector(loads)
    state = init.copy() if init is not None else net.flat_state()
    fixed_v = net.is_slack | net.is_pv
    state.V[fixed_v] = net.vset[fixed_v]
    if pv_setpoints:
        for (node, ph), v in pv_setpoints.items():
            state.V[net.bp(node, ph)] = v
    state.theta[net.is_slack] = net.offset[net.is_slack]
    ang, mag = _unknowns(net)

    def mismatch(st):
        s = net.injection_power(st.complex) - target
        return np.concatenate([s.real[ang], s.imag[mag]])

    f = mismatch(state)
    err = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    while err >= tol:
        if it >= max_iter:
            raise LoadflowError(f"load flow did not converge in {max_iter} iterations (mismatch {err:.3e} pu)", it, err)
        vc = state.complex
        di_dth, di_dvm = net.injection_derivatives(vc)
        jac = np.block(
            [
                [di_dth.real[np.ix_(ang, ang)], di_dvm.real[np.ix_(ang, mag)]],
                [di_dth.imag[np.ix_(mag, ang)], di_dvm.imag[np.ix_(mag, mag)]],
            ]
        )
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            dx = None
        if dx is None or not np.all(np.isfinite(dx)):
            deficiency = jac.shape[0] - np.linalg.matrix_rank(jac)
            raise SingularJacobianError(f"singular load-flow Jacobian (rank deficiency {deficiency})", deficiency)
        step = 1.0
        for _ in range(12):
            trial = state.copy()
            trial.theta[ang] += step * dx[: ang.size]
            trial.V[mag] += step * dx[ang.size:]
            f_new = mismatch(trial)
            err_new = float(np.max(np.abs(f_new)))
            if err_new < err or step < 1e-3:
                break
            step *= 0.5
            log.debug("load flow: halving step to %g", step)
        state, f, err = trial, f_new, err_new
        it += 1
    return SteadyState(net, state, loads, iterations=it, mismatch=err)


# --------------------------------------------------------------------------
# measurements


@dataclass(frozen=True)
class Reading:
    id: str
    kind: str
    value: float
    sigma: float
    branch: str | None = None
    frm: str | None = None
    to: str | None = None
    node: str | None = None
    phase: str = ""

    def with_value(self, value: float) -> "Reading":
        return replace(self, value=float(value))


def flow_id(kind: str, frm: str, to: str, phase: str) -> str:
    return f"{kind}_{frm}_{to}_{phase}"


def node_id(kind: str, node: str, phase: str) -> str:
    return f"{kind}_{node}_{phase}"


@dataclass(frozen=True)
class MeasurementSet:
    readings: tuple[Reading, ...]

    def __post_init__(self):
        ids = [r.id for r in self.readings]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate measurement ids")

    def __len__(self):
        return len(self.readings)

    def __iter__(self):
        return iter(self.readings)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.readings]

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.readings])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([r.sigma for r in self.readings])

    def __getitem__(self, rid: str) -> Reading:
        for r in self.readings:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def as_dict(self) -> dict[str, float]:
        return {r.id: r.value for r in self.readings}

    def with_values(self, values: Sequence[float]) -> "MeasurementSet":
        return MeasurementSet(tuple(r.with_value(v) for r, v in zip(self.readings, values)))

    def updated(self, changes: dict[str, float]) -> "MeasurementSet":
        return MeasurementSet(tuple(r.with_value(changes[r.id]) if r.id in changes else r for r in self.readings))

    def without(self, kinds: Iterable[str]) -> "MeasurementSet":
        kinds = set(kinds)
        return MeasurementSet(tuple(r for r in self.readings if r.kind not in kinds))

    # -- CSV (SI units) -------------------------------------------------

    def to_csv(self, grid) -> str:
        net = Network.of(grid)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "kind", "from", "to", "node", "phase", "value", "sigma"])
        for r in self.readings:
            scale = _si_scale(net, r)
            w.writerow([r.id, r.kind, r.frm or "", r.to or "", r.node or "", r.phase,
                        repr(r.value * scale), repr(r.sigma * scale)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, grid) -> "MeasurementSet":
        net = Network.of(grid)
        lines = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                if lines:
                    break
                continue
            lines.append(line)
        rows = csv.DictReader(lines)
        readings = []
        for row in rows:
            kind = row["kind"]
            if kind not in KINDS:
                raise ValueError(f"unknown measurement kind {kind!r}")
            frm, to, node = row["from"] or None, row["to"] or None, row["node"] or None
            branch = None
            if kind in ("PF", "QF"):
                branch = _branch_between(net, frm, to)
            r = Reading(row["id"], kind, 0.0, 0.0, branch, frm, to, node, row["phase"])
            scale = _si_scale(net, r)
            readings.append(replace(r, value=float(row["value"]) / scale, sigma=float(row["sigma"]) / scale))
        return cls(tuple(readings))


def _branch_between(net: Network, a: str, b: str) -> str:
    for br in net.grid.branches:
        if {br.from_node, br.to_node} == {a, b}:
            return br.id
    raise KeyError(f"no branch between {a} and {b}")


def _si_scale(net: Network, r: Reading) -> float:
    if r.kind in ("PF", "QF", "PI", "QI"):
        return net.s_base
    if r.kind == "VM":
        return float(net.vbase[net.bp(r.node, r.phase)])
    return 1.0


class MeasurementModel:
    """Evaluates h(x) and its Jacobian for a fixed measurement layout."""

    def __init__(self, grid, readings: Iterable[Reading]):
        net = self.network = Network.of(grid)
        self.readings = tuple(readings)
        src, idx = [], []
        for r in self.readings:
            if r.kind in ("PF", "QF"):
                b = net.grid.branch(r.branch)
                end = "from" if r.frm == b.from_node else "to"
                src.append(0 if r.kind == "PF" else 1)
                idx.append(net.term_index[(r.branch, end, r.phase)])
            elif r.kind in ("PI", "QI"):
                src.append(2 if r.kind == "PI" else 3)
                idx.append(net.bp(r.node, r.phase))
            elif r.kind == "VM":
                src.append(4)
                idx.append(net.bp(r.node, r.phase))
            elif r.kind == "VA":
                src.append(5)
                idx.append(net.bp(r.node, r.phase))
            else:
                raise ValueError(f"unknown kind {r.kind}")
        self.src = np.array(src, dtype=int)
        self.idx = np.array(idx, dtype=int)

    def h(self, state: PhasorState) -> np.ndarray:
        net = self.network
        vc = state.complex
        st = net.terminal_power(vc)
        si = net.cinj @ st + np.abs(vc) ** 2 * np.conj(net.ysh)
        pools = (st.real, st.imag, si.real, si.imag, state.V, state.theta)
        out = np.empty(len(self.readings))
        for s, pool in enumerate(pools):
            m = self.src == s
            out[m] = pool[self.idx[m]]
        return out

    def jacobian(self, state: PhasorState) -> np.ndarray:
        """Full Jacobian, columns ``[theta_0..theta_nb-1, V_0..V_nb-1]``."""
        net = self.network
        nb = net.nb
        vc = state.complex
        ds_dth, ds_dvm = net.terminal_derivatives(vc)
        di_dth = net.cinj @ ds_dth
        di_dvm = net.cinj @ ds_dvm + np.diag(2.0 * np.abs(vc) * np.conj(net.ysh))
        eye = np.eye(nb)
        zero = np.zeros((nb, nb))
        pools = (
            np.hstack([ds_dth.real, ds_dvm.real]),
            np.hstack([ds_dth.imag, ds_dvm.imag]),
            np.hstack([di_dth.real, di_dvm.real]),
            np.hstack([di_dth.imag, di_dvm.imag]),
            np.hstack([zero, eye]),
            np.hstack([eye, zero]),
        )
        out = np.empty((len(self.readings), 2 * nb))
        for s, pool in enumerate(pools):
            m = self.src == s
            out[m] = pool[self.idx[m]]
        return out


def default_sigma(kind: str, value: float) -> float:
    if kind in ("VM", "VA"):
        return max(0.001 * abs(value), 1e-6)
    return max(0.002 * abs(value), 1e-4)


def measurement_layout(grid, *, include_slack_voltage: bool = True) -> list[Reading]:
    """Readings emitted by :func:`measure_all`, values zero."""
    net = Network.of(grid)
    g = net.grid
    out = []
    for b in g.branches:
        for frm, to in ((b.from_node, b.to_node), (b.to_node, b.from_node)):
            for p in b.phases:
                for kind in ("PF", "QF"):
                    out.append(Reading(flow_id(kind, frm, to, p), kind, 0.0, 0.0, b.id, frm, to, None, p))
    for n in g.nodes:
        if n.role == "zero":
            continue
        for p in n.phases:
            for kind in ("PI", "QI"):
                out.append(Reading(node_id(kind, n.id, p), kind, 0.0, 0.0, None, None, None, n.id, p))
    if include_slack_voltage:
        n = g.slack
        for p in n.phases:
            out.append(Reading(node_id("VM", n.id, p), "VM", 0.0, 0.0, None, None, None, n.id, p))
    return out


def measure_all(steady: SteadyState | PhasorState, grid=None, *, sigma=default_sigma) -> MeasurementSet:
    """Exact readings at a state: both-terminal flows on every branch-phase,
    injections at every non-zero-injection node-phase and slack magnitudes."""
    if isinstance(steady, SteadyState):
        state = steady.state
        grid = steady.network if grid is None else grid
    else:
        state = steady
    layout = measurement_layout(grid)
    values = MeasurementModel(grid, layout).h(state)
    return MeasurementSet(tuple(replace(r, value=float(v), sigma=sigma(r.kind, float(v))) for r, v in zip(layout, values)))


def add_noise(z: MeasurementSet, seed: int | None = None) -> MeasurementSet:
    """Perturb each reading with independent zero-mean Gaussian noise of its sigma."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(z)) * z.sigmas
    return z.with_values(z.values + noise)


# --------------------------------------------------------------------------
# steady-state export


def state_csv(state: PhasorState, grid) -> str:
    net = Network.of(grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "phase", "V_pu", "theta_deg", "V_volts"])
    for k, (node, ph) in enumerate(state.bus_phases):
        w.writerow([node, ph, f"{state.V[k]:.10f}", f"{math.degrees(state.theta[k]):.10f}",
                    f"{state.V[k] * net.vbase[k]:.6f}"])
    return buf.getvalue()


def steady_state_csv(steady: SteadyState) -> str:
    z = measure_all(steady)
    return z.to_csv(steady.network) + "\n# state\n" + state_csv(steady.state, steady.network)


def read_state_csv(text: str, grid) -> PhasorState:
    net = Network.of(grid)
    lines = text.splitlines()
    if "# state" in lines:
        lines = lines[lines.index("# state") + 1:]
    state = net.flat_state()
    for row in csv.DictReader(line for line in lines if line.strip()):
        k = net.bp(row["node"], row["phase"])
        state.V[k] = float(row["V_pu"])
        state.theta[k] = math.radians(float(row["theta_deg"]))
    return state
