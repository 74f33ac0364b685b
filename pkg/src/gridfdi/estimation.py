"""Weighted-least-squares state estimation and bad-data detection.

The estimator fits every non-slack voltage magnitude and angle to a
:class:`~gridfdi.powerflow.MeasurementSet` by Gauss-Newton iterations on

    F(x) = (z - h(x))^T W (z - h(x)),    W = diag(1 / sigma^2)

with a backtracking line search so that F never increases. Detection pairs
a chi-square test on F with the largest normalized residual test.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from gridfdi.powerflow import MeasurementModel, MeasurementSet, Network, PhasorState, state_csv

RN_THRESHOLD = 3.0
CHI2_CONFIDENCE = 0.975


class UnobservableError(RuntimeError):
    """The gain matrix is rank deficient; ``null_space`` is its nullity."""

    def __init__(self, message, null_space):
        super().__init__(message)
        self.null_space = null_space


class EstimationError(RuntimeError):
    pass


def state_columns(grid) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the unknown angles and magnitudes (all non-slack bus-phases)."""
    net = Network.of(grid)
    free = np.flatnonzero(~net.is_slack)
    return free, free.copy()


def column_labels(grid) -> list[tuple[str, str, str]]:
    net = Network.of(grid)
    ang, mag = state_columns(net)
    return [("theta", *net.bus_phases[k]) for k in ang] + [("V", *net.bus_phases[k]) for k in mag]


def jacobian(grid, state: PhasorState, z) -> np.ndarray:
    """dh/dx for the readings in ``z`` with respect to the unknown states.

    Columns are the non-slack angles followed by the non-slack magnitudes,
    in bus-phase order; absent phases have no column at all.
    """
    model = z if isinstance(z, MeasurementModel) else MeasurementModel(grid, z)
    full = model.jacobian(state)
    nb = model.network.nb
    ang, mag = state_columns(model.network)
    return np.hstack([full[:, ang], full[:, nb + mag]])


@dataclass
class EstimateResult:
    state: PhasorState
    ids: list[str]
    residuals: np.ndarray  # z - h(x), pu
    sigmas: np.ndarray
    normalized_residuals: np.ndarray
    objective: float
    iterations: int
    converged: bool
    n_states: int
    gradient_norm: float  # max |G^-1 grad F|, i.e. the next Gauss-Newton step
    history: list[float] = field(default_factory=list)

    @property
    def residual_norm(self) -> float:
        """Weighted residual norm sqrt(F)."""
        return math.sqrt(self.objective)

    @property
    def raw_residual_norm(self) -> float:
        return float(np.linalg.norm(self.residuals))

    @property
    def dof(self) -> int:
        return len(self.ids) - self.n_states

    def default_tau(self) -> float:
        return chi2_threshold(self.dof)

    def to_csv(self, grid) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["objective", "residual_norm", "converged", "iterations"])
        w.writerow([repr(self.objective), repr(self.residual_norm), str(self.converged).lower(), self.iterations])
        return buf.getvalue() + "\n# state\n" + state_csv(self.state, grid)


def chi2_threshold(dof: int, confidence: float = CHI2_CONFIDENCE) -> float:
    if dof <= 0:
        raise UnobservableError("no measurement redundancy (m <= n)", 0)
    return float(stats.chi2.ppf(confidence, dof))


def estimate(
    grid,
    z: MeasurementSet,
    init: PhasorState | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> EstimateResult:
    """Gauss-Newton WLS fit of the state to ``z``.

    Slack phases are held at ``init`` (flat start: setpoint and standard
    offsets). Raises :class:`UnobservableError` if the gain matrix at the
    starting point is rank deficient. Non-convergence is reported through
    ``converged=False`` rather than raised.
    """
    net = Network.of(grid)
    model = MeasurementModel(net, z.readings)
    zv = z.values
    sig = z.sigmas
    if np.any(sig <= 0):
        raise ValueError("all sigmas must be positive")
    w = 1.0 / sig**2
    state = init.copy() if init is not None else net.flat_state()
    ang, mag = state_columns(net)
    n = ang.size + mag.size

    def objective(st):
        r = zv - model.h(st)
        return r, float(r @ (w * r))

    def step_to(st, dx, alpha):
        out = st.copy()
        out.theta[ang] += alpha * dx[: ang.size]
        out.V[mag] += alpha * dx[ang.size:]
        return out

    r, f = objective(state)
    h = jacobian(net, state, model)
    gain = h.T @ (w[:, None] * h)
    rank = np.linalg.matrix_rank(gain, tol=_rank_tol(gain))
    if rank < n:
        raise UnobservableError(f"measurement set is unobservable (gain null space {n - rank})", n - rank)

    history = [f]
    converged = False
    it = 0
    grad = h.T @ (w * r)
    while it < max_iter:
        try:
            dx = np.linalg.solve(gain, grad)
        except np.linalg.LinAlgError:
            raise UnobservableError("gain matrix became singular", n - np.linalg.matrix_rank(gain)) from None
        it += 1
        alpha = 1.0
        for _ in range(40):
            trial = step_to(state, dx, alpha)
            if np.all(trial.V > 0):
                r_new, f_new = objective(trial)
                if f_new <= f:
                    break
            alpha *= 0.5
        else:
            break  # no descent possible: at a minimum up to roundoff
        state, r, f = trial, r_new, f_new
        history.append(f)
        h = jacobian(net, state, model)
        gain = h.T @ (w[:, None] * h)
        grad = h.T @ (w * r)
        if np.max(np.abs(dx)) < tol:
            converged = True
            break
    # the raw gradient scales with 1/sigma^2; the gain-scaled one is in state units
    scaled = float(np.max(np.abs(np.linalg.lstsq(gain, grad, rcond=None)[0]))) if n else 0.0
    if not converged and scaled < tol:
        converged = True

    rn = normalized_residuals(h, r, sig, gain)
    return EstimateResult(
        state=state,
        ids=list(z.ids),
        residuals=r,
        sigmas=sig,
        normalized_residuals=rn,
        objective=f,
        iterations=it,
        converged=converged,
        n_states=n,
        gradient_norm=scaled,
        history=history,
    )


def _rank_tol(m: np.ndarray) -> float:
    s = np.linalg.svd(m, compute_uv=False)
    return s.max() * max(m.shape) * 1e-13 if s.size else 0.0


def normalized_residuals(h, r, sigma, gain=None) -> np.ndarray:
    """|r_i| / sqrt(Omega_ii) with Omega = R - H G^-1 H^T.

    Critical measurements (Omega_ii ~ 0) cannot be tested and get 0.
    """
    w = 1.0 / sigma**2
    if gain is None:
        gain = h.T @ (w[:, None] * h)
    ginv_ht = np.linalg.solve(gain, h.T)
    omega = sigma**2 - np.einsum("ij,ji->i", h, ginv_ht)
    out = np.zeros_like(r)
    ok = omega > 1e-10 * sigma**2
    out[ok] = np.abs(r[ok]) / np.sqrt(omega[ok])
    return out


@dataclass(frozen=True)
class Verdict:
    clean: bool
    objective: float
    tau: float
    max_normalized_residual: float
    suspects: tuple[tuple[str, float], ...] = ()

    @property
    def label(self) -> str:
        return "clean" if self.clean else "bad"


def detect_bad_data(result: EstimateResult, tau: float | None = None, rn_threshold: float = RN_THRESHOLD) -> Verdict:
    """Chi-square test on the objective plus largest normalized residual test.

    ``tau`` defaults to the 97.5th chi-square percentile with m - n degrees
    of freedom. Suspects are readings whose normalized residual exceeds
    ``rn_threshold``, largest first.
    """
    if not result.converged:
        raise EstimationError("bad-data detection needs a converged estimate")
    if tau is None:
        tau = result.default_tau()
    rn = result.normalized_residuals
    order = np.argsort(-rn, kind="stable")
    suspects = tuple((result.ids[k], float(rn[k])) for k in order if rn[k] > rn_threshold)
    rn_max = float(rn.max()) if rn.size else 0.0
    clean = result.objective <= tau and not suspects
    return Verdict(clean, result.objective, float(tau), rn_max, suspects)


# --------------------------------------------------------------------------
# linear (DC) model


def dc_estimate(h: np.ndarray, z: np.ndarray, sigma: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Linear WLS: returns (x, ||z - H x||)."""
    w = np.ones(len(z)) if sigma is None else 1.0 / np.asarray(sigma) ** 2
    sw = np.sqrt(w)
    x, *_ = np.linalg.lstsq(h * sw[:, None], z * sw, rcond=None)
    return x, float(np.linalg.norm(z - h @ x))
