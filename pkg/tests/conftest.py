import math

import pytest

from gridfdi import SV, bundled_grid, design_attack_a2, find_attack_areas, measure_all, solve_loadflow

# Omega_A1 design used throughout: theta^a at 652 raised by 0.1 deg with
# V^a, V^c and theta^c at 684 held.
A1_INIT = ("theta:652:a", math.radians(0.1))
A1_FIXED = ("V:684:a", "V:684:c", "theta:684:c")
A4_FIXED = ("V:645:b", "V:645:c", "theta:645:c", "V:646:b", "theta:646:b", "V:646:c", "theta:646:c")


@pytest.fixture(scope="session")
def ieee13():
    return bundled_grid("ieee13_mod")


@pytest.fixture(scope="session")
def wscc9():
    return bundled_grid("wscc9")


@pytest.fixture(scope="session")
def steady13(ieee13):
    return solve_loadflow(ieee13)


@pytest.fixture(scope="session")
def steady9(wscc9):
    return solve_loadflow(wscc9)


@pytest.fixture(scope="session")
def z13(steady13):
    return measure_all(steady13)


@pytest.fixture(scope="session")
def z9(steady9):
    return measure_all(steady9)


@pytest.fixture(scope="session")
def attack_a1(ieee13, steady13):
    area = find_attack_areas(ieee13, "652")
    return design_attack_a2(
        area, steady13, ieee13, init=(SV.parse(A1_INIT[0]), A1_INIT[1]), fixed=[SV.parse(s) for s in A1_FIXED]
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
