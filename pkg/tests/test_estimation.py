import numpy as np
import pytest
from scipy import stats

from gridfdi import MeasurementSet, add_noise, detect_bad_data, estimate, jacobian, measure_all
from gridfdi.estimation import (
    EstimationError,
    UnobservableError,
    chi2_threshold,
    dc_estimate,
    normalized_residuals,
    state_columns,
)
from gridfdi.powerflow import MeasurementModel


@pytest.mark.parametrize("name", ["ieee13", "wscc9"])
def test_fixed_point(name, request):
    grid = request.getfixturevalue(name)
    from gridfdi import solve_loadflow

    ss = solve_loadflow(grid)
    res = estimate(grid, measure_all(ss))
    assert res.converged
    assert np.max(np.abs(res.state.V - ss.state.V)) < 1e-6
    assert np.max(np.abs(res.state.theta - ss.state.theta)) < 1e-6
    assert detect_bad_data(res).clean


def _fd_jacobian(grid, model, state, h=1e-6):
    ang, mag = state_columns(grid)
    cols = []
    for kind, idx in (("theta", ang), ("V", mag)):
        for k in idx:
            up, dn = state.copy(), state.copy()
            getattr(up, kind)[k] += h
            getattr(dn, kind)[k] -= h
            cols.append((model.h(up) - model.h(dn)) / (2 * h))
    return np.column_stack(cols)


@pytest.mark.parametrize("name", ["ieee13", "wscc9"])
def test_jacobian_matches_finite_differences(name, request, z13, z9):
    grid = request.getfixturevalue(name)
    z = z13 if name == "ieee13" else z9
    model = MeasurementModel(grid, z.readings)
    rng = np.random.default_rng(11)
    from gridfdi import Network

    base = Network.of(grid).flat_state()
    worst = 0.0
    for _ in range(50):
        st_ = base.copy()
        st_.V *= rng.uniform(0.9, 1.1, st_.V.size)
        st_.theta += rng.normal(0, 0.1, st_.theta.size)
        an = jacobian(grid, st_, model)
        fd = _fd_jacobian(grid, model, st_)
        worst = max(worst, np.max(np.abs(an - fd)) / np.max(np.abs(an)))
    assert worst < 1e-5


def test_objective_monotone_with_noise(ieee13, z13):
    res = estimate(ieee13, add_noise(z13, 3))
    assert res.converged
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert res.gradient_norm < 1e-8


def test_noisy_objective_follows_chi_square(wscc9, z9):
    objs = [estimate(wscc9, add_noise(z9, s)).objective for s in range(30)]
    dof = len(z9) - len(state_columns(wscc9)[0]) * 2
    # mean of chi2(dof) is dof; 30 samples, std of mean ~ sqrt(2 dof / 30)
    assert abs(np.mean(objs) - dof) < 4 * np.sqrt(2 * dof / 30)


@pytest.mark.parametrize("name", ["ieee13", "wscc9"])
def test_gross_error_flagged(name, request, z13, z9):
    grid = request.getfixturevalue(name)
    z = z13 if name == "ieee13" else z9
    rng = np.random.default_rng(5)
    clean = estimate(grid, z)
    rn0 = clean.normalized_residuals
    assert rn0.max() < 1e-6
    flagged, identified, trials = 0, 0, 0
    for k in rng.choice(len(z), size=25, replace=False):
        r = z.readings[k]
        bad = z.updated({r.id: r.value + 20 * r.sigma})
        res = estimate(grid, bad)
        v = detect_bad_data(res)
        trials += 1
        flagged += not v.clean
        identified += bool(v.suspects) and v.suspects[0][0] == r.id
    assert flagged >= 0.95 * trials


def test_normalized_residuals_oracle(ieee13, z13):
    res = estimate(ieee13, add_noise(z13, 1))
    h = jacobian(ieee13, res.state, z13)
    w = np.diag(1 / res.sigmas**2)
    g = h.T @ w @ h
    omega = np.diag(res.sigmas**2) - h @ np.linalg.inv(g) @ h.T
    d = np.diag(omega)
    ok = d > 1e-10 * res.sigmas**2
    ref = np.zeros_like(d)
    ref[ok] = np.abs(res.residuals[ok]) / np.sqrt(d[ok])
    assert np.allclose(normalized_residuals(h, res.residuals, res.sigmas), ref, rtol=1e-6, atol=1e-9)


def test_threshold_is_chi_square_quantile(ieee13, z13):
    res = estimate(ieee13, z13)
    assert res.default_tau() == pytest.approx(stats.chi2.ppf(0.975, res.dof))
    assert res.dof == len(z13) - res.n_states
    assert chi2_threshold(10) == pytest.approx(20.483, abs=1e-3)
    with pytest.raises(UnobservableError):
        chi2_threshold(0)


def test_custom_tau(ieee13, z13):
    res = estimate(ieee13, add_noise(z13, 2))
    assert not detect_bad_data(res, tau=res.objective * 0.5, rn_threshold=1e9).clean
    assert detect_bad_data(res, tau=res.objective * 2, rn_threshold=1e9).clean


def test_unobservable(ieee13, z13):
    with pytest.raises(UnobservableError) as info:
        estimate(ieee13, z13.without(["PF", "QF", "PI", "QI"]))
    assert info.value.null_space > 0
    flows_only_one_branch = MeasurementSet(tuple(r for r in z13 if r.branch == "L684-652" or r.kind == "VM"))
    with pytest.raises(UnobservableError):
        estimate(ieee13, flows_only_one_branch)


def test_detect_requires_convergence(ieee13, z13):
    res = estimate(ieee13, z13, max_iter=1)
    if res.converged:
        pytest.skip("converged in one step")
    with pytest.raises(EstimationError):
        detect_bad_data(res)


def test_bad_sigma_rejected(ieee13, z13):
    zero = MeasurementSet(tuple(r.__class__(r.id, r.kind, r.value, 0.0, r.branch, r.frm, r.to, r.node, r.phase) for r in z13))
    with pytest.raises(ValueError):
        estimate(ieee13, zero)


def test_estimate_csv(ieee13, z13):
    text = estimate(ieee13, z13).to_csv(ieee13)
    lines = text.splitlines()
    assert lines[0] == "objective,residual_norm,converged,iterations"
    assert lines[1].split(",")[2] == "true"
    assert "# state" in lines


def test_dc_estimate_exact_fit():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(12, 4))
    x = rng.normal(size=4)
    xe, r = dc_estimate(h, h @ x)
    assert np.allclose(xe, x) and r < 1e-12
