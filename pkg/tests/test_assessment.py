import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gridfdi import assess, compare_sets
from gridfdi.assessment import FLOOR_PU, AssessmentReport, Row


@pytest.mark.parametrize(
    "attack, oracle, pct",
    [
        (11.26, 11.29, -0.266),  # Q^c_1108 (kVAr)
        (-105.30, -105.23, 0.067),  # Q^a_1108
        (105.49, 105.41, 0.076),  # Q^a_0811
        (-172.62, -172.61, 0.006),  # P^c_1108
    ],
)
def test_pct_matches_published_pairs(attack, oracle, pct):
    (row,) = compare_sets({"QF_x": attack}, {"QF_x": oracle})
    assert row.pct() == pytest.approx(pct, abs=1e-3)


def test_near_zero_floor():
    row = Row("PF_x", "PF", 1e-6, 0.0, "pu")
    assert row.pct() == pytest.approx(100 * 1e-6 / FLOOR_PU)
    assert Row("PF_x", "PF", 0.0, 1e-6, "pu").pct() == pytest.approx(-0.1)


def test_key_mismatch():
    with pytest.raises(KeyError, match="missing"):
        compare_sets({"PF_a": 1.0, "PF_b": 1.0}, {"PF_a": 1.0})


def test_rows_sorted_by_kind():
    keys = {"V_1_a": 1.0, "PI_1_a": 1.0, "PF_1_2_a": 1.0, "theta_1_a": 0.0}
    assert [r.kind for r in compare_sets(keys, keys)] == ["PF", "PI", "V", "theta"]


def test_scaled_row_threshold():
    d = {"PF_1_2_a": 1.0, "PF_2_1_a": -0.99}
    o = dict(d)
    o["PF_1_2_a"] = 1.0 / 1.01  # design is 1% above the oracle: pct just under 1
    rep = AssessmentReport(compare_sets(d, o))
    assert rep.max_abs_pct_diff == pytest.approx(100 * (1 - 1 / 1.01))
    assert rep.stealthy
    o["PF_1_2_a"] = 0.98
    assert not AssessmentReport(compare_sets(d, o)).stealthy


def test_angle_rows_use_degrees():
    d = {"theta_1_a": 0.001, "V_1_a": 1.0}
    rep = AssessmentReport(compare_sets(d, {"theta_1_a": 0.04, "V_1_a": 1.0}, units={"theta_1_a": "deg"}))
    assert rep.stealthy  # 0.039 deg, though the ratio would be huge
    rep = AssessmentReport(compare_sets(d, {"theta_1_a": 0.06, "V_1_a": 1.0}, units={"theta_1_a": "deg"}))
    assert not rep.stealthy


@given(x=st.floats(-10, 10, allow_nan=False), eps=st.floats(-0.5, 0.5))
def test_verdict_iff_threshold(x, eps):
    d = {"PF_1_2_a": x}
    o = {"PF_1_2_a": x * (1 - eps / 100)}
    rep = AssessmentReport(compare_sets(d, o), threshold=0.3)
    assert rep.stealthy == (rep.max_abs_pct_diff < 0.3)


def test_steady_state_as_attack(ieee13, steady13, attack_a1):
    fake = replace(attack_a1, state=steady13.state.copy(), z_hat=attack_a1.z)
    rep = assess(ieee13, fake)
    assert rep.stealthy
    assert rep.max_abs_pct_diff < 1e-6
    assert rep.max_angle_diff_deg < 1e-8


def test_designed_attack_below_band(ieee13, attack_a1):
    rep = assess(ieee13, attack_a1)
    assert rep.stealthy
    assert rep.max_abs_pct_diff < 0.3
    n = len(attack_a1.z_hat) + 2 * len(attack_a1.network.bus_phases)
    assert len(rep.rows) == n


@pytest.mark.parametrize("rid", ["PI_652_a", "QI_611_c", "PI_671_c"])
def test_corrupted_injection_flips_verdict(ieee13, attack_a1, rid):
    z = attack_a1.z_hat
    bad = replace(attack_a1, z_hat=z.updated({rid: z[rid].value * 1.05}))
    assert not assess(ieee13, bad).stealthy


def test_threshold_configurable(ieee13, attack_a1):
    z = attack_a1.z_hat
    bad = replace(attack_a1, z_hat=z.updated({"PI_652_a": z["PI_652_a"].value * 1.05}))
    assert assess(ieee13, bad, threshold=1e6, angle_threshold=1e6).stealthy


def test_oracle_failure_is_detectable(ieee13, attack_a1):
    z = attack_a1.z_hat
    huge = {r.id: r.value * 60 for r in z if r.kind in ("PI", "QI")}
    rep = assess(ieee13, replace(attack_a1, z_hat=z.updated(huge)))
    assert rep.reason and rep.verdict == "detectable"


def test_report_outputs(ieee13, attack_a1):
    rep = assess(ieee13, attack_a1)
    csv_lines = rep.to_csv().splitlines()
    assert csv_lines[0] == "quantity,kind,unit,design,oracle,diff,pct_diff"
    row = next(line for line in csv_lines if line.startswith("PF_684_671_a,"))
    assert row.split(",")[2] == "kW"
    assert float(row.split(",")[3]) == pytest.approx(-102.93, abs=0.2)
    s = rep.summary()
    assert s["verdict"] == "stealthy" and s["rows"] == len(rep.rows)
    plot = rep.plot_data().splitlines()
    assert plot[0] == "index,quantity,pct_diff" and len(plot) == len(rep.rows) + 1
    assert math.isfinite(rep.mean_abs_pct())
    assert np.all(np.isfinite(rep.pcts()))
