import io
import json

import numpy as np
import pytest

from evload.errors import InvalidCaseError, InvalidSizeError, NonConvergenceError, ProfileMismatchError
from evload.gridval import (
    Bus,
    GridCase,
    Line,
    build_fixture_case,
    compare_profiles,
    gauss_seidel,
    line_losses,
    loads_from_daily_average,
    reactive_from_pf,
    read_loads_csv,
    slack_power,
    solve_power_flow,
    write_loads_csv,
)


def two_bus(p=0.1, q=0.05):
    return GridCase([Bus(0, "slack"), Bus(1)], [Line(0, 1, 0.01, 0.03)], 1.0,
                    np.array([[0.0, p]]), np.array([[0.0, q]]))


def test_zero_load_is_flat():
    for n in range(2, 7):
        sol = solve_power_flow(build_fixture_case(n))
        assert np.all(sol.vm == 1.0) and np.all(sol.va == 0.0)
        assert sol.iterations == 0 and sol.converged


def test_two_bus_against_closed_form():
    # |V2| solves v^4 + (2(rP + xQ) - 1) v^2 + (r^2 + x^2)(P^2 + Q^2) = 0
    r, x, p, q = 0.01, 0.03, 0.1, 0.05
    b = 2 * (r * p + x * q) - 1
    c = (r * r + x * x) * (p * p + q * q)
    v2 = np.sqrt((-b + np.sqrt(b * b - 4 * c)) / 2)
    sol = solve_power_flow(two_bus(p, q))
    assert sol.vm[1] == pytest.approx(v2, abs=1e-12)
    assert sol.vm[0] == 1.0 and sol.va[0] == 0.0
    gs = gauss_seidel(two_bus(p, q))
    assert np.max(np.abs(gs.vm - sol.vm)) <= 1e-8


def test_infeasible_load_raises():
    with pytest.raises(NonConvergenceError) as info:
        solve_power_flow(two_bus(100.0, 50.0))
    assert info.value.iterations >= 1


def random_radial_case(rng, n):
    buses = [Bus(0, "slack")] + [Bus(k) for k in range(1, n)]
    lines = [Line(int(rng.integers(0, k)), k, float(rng.uniform(0.005, 0.05)), float(rng.uniform(0.01, 0.1)))
             for k in range(1, n)]
    p = np.concatenate([[0.0], rng.uniform(0, 0.3, n - 1)])
    return GridCase(buses, lines, 1.0, p[None, :], reactive_from_pf(p)[None, :])


def test_random_cases_agree_and_balance():
    rng = np.random.default_rng(123)
    for _ in range(30):
        case = random_radial_case(rng, int(rng.integers(2, 7)))
        nr = solve_power_flow(case)
        gs = gauss_seidel(case)
        assert np.max(np.abs(nr.vm - gs.vm)) <= 1e-7
        s = slack_power(case, nr)
        assert abs(s.real - case.p_load.sum() - line_losses(case, nr)) <= 1e-8


def test_voltage_drops_with_load():
    base = solve_power_flow(two_bus(0.1, 0.05)).vm[1]
    heavier = solve_power_flow(two_bus(0.2, 0.1)).vm[1]
    assert heavier < base < 1.0


def test_fixture_profiles():
    case = build_fixture_case(5, np.array([0.1, 0.2]))
    assert case.p_load.shape == (2, 5)
    assert np.all(case.p_load[:, 0] == 0) and np.all(case.p_load[1, 1:] == 0.2)
    assert np.allclose(case.q_load, case.p_load * np.tan(np.arccos(0.95)))
    mapped = build_fixture_case(3, {2: [0.1, 0.1, 0.1]})
    assert mapped.p_load.shape == (3, 3) and np.all(mapped.p_load[:, 1] == 0)
    with pytest.raises(InvalidSizeError):
        build_fixture_case(1)
    with pytest.raises(ProfileMismatchError):
        build_fixture_case(4, np.zeros((3, 2)))


def test_loads_from_daily_average():
    # 25 kWh per 15 minutes is 100 kW, i.e. 0.1 MW
    assert loads_from_daily_average(25.0) == pytest.approx(0.1)
    assert loads_from_daily_average(25.0, base_mva=10.0) == pytest.approx(0.01)


def test_identical_profiles_give_zero_deviation():
    case = build_fixture_case(5, np.linspace(0.05, 0.2, 6))
    rep = compare_profiles(case, (case.p_load, case.q_load), (case.p_load, case.q_load))
    assert np.all(rep.dv == 0.0) and rep.max_abs == 0.0


def test_overforecast_lowers_voltage():
    case = build_fixture_case(5, np.linspace(0.05, 0.2, 6))
    pred = (case.p_load * 1.01, case.q_load * 1.01)
    rep = compare_profiles(case, (case.p_load, case.q_load), pred)
    assert np.all(rep.dv[:, 1:] < 0) and np.all(rep.dv[:, 0] == 0)
    assert rep.argmax_bus == 4


def test_halving_error_shrinks_deviation():
    rng = np.random.default_rng(5)
    actual = rng.uniform(0.05, 0.2, size=(10, 4))
    pred = actual + rng.normal(scale=0.03, size=actual.shape)
    case = build_fixture_case(5, actual)
    full = build_fixture_case(5, pred)
    half = build_fixture_case(5, actual + 0.5 * (pred - actual))
    a = (case.p_load, case.q_load)
    r_full = compare_profiles(case, a, (full.p_load, full.q_load))
    r_half = compare_profiles(case, a, (half.p_load, half.q_load))
    assert np.isfinite(r_full.max_abs) and 0 < r_half.max_abs < r_full.max_abs


def test_deviation_outputs():
    case = build_fixture_case(3, np.array([0.1, 0.2]))
    rep = compare_profiles(case, (case.p_load, case.q_load), (case.p_load * 1.1, case.q_load * 1.1))
    buf = io.StringIO()
    rep.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "timestep,bus_id,dv_pu" and len(lines) == 1 + 2 * 3
    summary = rep.summary()
    assert summary["argmax_timestep"] == 1 and summary["max_abs_dv_pu"] == rep.max_abs
    json.dumps(summary)


def test_case_json_round_trip():
    case = build_fixture_case(4, np.array([0.1, 0.3]))
    back = GridCase.from_json(case.to_json())
    assert back.to_json() == case.to_json()
    # the document carries topology; loads travel separately as CSV
    assert back.buses == case.buses and back.lines == case.lines
    assert np.all(back.p_load == 0)
    with pytest.raises(InvalidCaseError):
        GridCase.from_json('{"buses": []}')


def test_loads_csv_round_trip():
    case = build_fixture_case(3, np.array([0.1, 0.2, 0.3]))
    buf = io.StringIO()
    write_loads_csv(case.p_load, case.q_load, case.bus_ids, buf)
    assert buf.getvalue().startswith("timestep,bus_id,p_pu,q_pu\n")
    p, q = read_loads_csv(io.StringIO(buf.getvalue()), case)
    assert np.array_equal(p, case.p_load) and np.array_equal(q, case.q_load)


@pytest.mark.parametrize("buses,lines", [
    ([Bus(0), Bus(1)], [Line(0, 1, 0.01, 0.01)]),
    ([Bus(0, "slack"), Bus(1, "slack")], [Line(0, 1, 0.01, 0.01)]),
    ([Bus(0, "slack"), Bus(1), Bus(2)], [Line(0, 1, 0.01, 0.01)]),
    ([Bus(0, "slack"), Bus(1)], [Line(0, 1, -0.01, 0.01)]),
    ([Bus(0, "slack"), Bus(1)], [Line(0, 1, 0.0, 0.0)]),
    ([Bus(0, "slack"), Bus(1)], [Line(0, 2, 0.01, 0.01)]),
])
def test_invalid_cases(buses, lines):
    with pytest.raises(InvalidCaseError):
        GridCase(buses, lines)
