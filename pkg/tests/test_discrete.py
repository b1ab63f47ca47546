import numpy as np
import pytest
from scipy.optimize import fsolve

from distflow import (ConstantQ, DomainError, FeederParams, ShootingProblem, VoltageFeedback,
                      backward_recursion, build_discrete, convergence_study, find_branches,
                      forward_sweep, integrate, physical_field, solutions_at_length,
                      solve_discrete)
from distflow.discrete import discrete_residuals

BASE = FeederParams(p=-1.0, control=ConstantQ(-0.5), length=0.5)
GEN = FeederParams(p=1.0, control=ConstantQ(0.5), length=1.5)


def test_uniform_lumping():
    f = build_discrete(FeederParams(p=-1.0, length=1.0), 10)
    assert np.allclose(f.p, -0.1)
    f = build_discrete(FeederParams(r=1.0, length=0.5), 5)
    assert np.allclose(f.r, 0.1)
    assert f.positions[-1] == pytest.approx(0.5)


def test_single_aggregated_load():
    f = build_discrete(BASE, 1)
    assert f.N == 1
    assert f.p[0] == -0.5 and f.q[0] == -0.25 and f.r[0] == 0.5


def test_build_validation():
    with pytest.raises(DomainError):
        build_discrete(BASE, 0)
    with pytest.raises(DomainError):
        build_discrete(BASE, 2, lengths=[0.5, -0.1])


def test_forward_sweep_fixed_point():
    f = build_discrete(FeederParams(p=0.0, control=ConstantQ(0.0), length=1.0), 7)
    sw = forward_sweep((0.0, 0.0), f)
    assert sw.complete
    assert np.all(sw.P == 0) and np.all(sw.Q == 0) and np.all(sw.v == 1)


def test_single_bus_against_hand_solution():
    params = BASE.with_length(0.3)
    f = build_discrete(params, 1)
    r, x, p, q = f.r[0], f.x[0], f.p[0], f.q[0]

    # head flows must cover the load plus the segment loss
    def balance(h):
        S = h[0] ** 2 + h[1] ** 2
        return [h[0] + p - r * S, h[1] + q - x * S]

    P0, Q0 = fsolve(balance, [-p, -q], xtol=1e-13)
    S = P0 ** 2 + Q0 ** 2
    v1 = np.sqrt(1 - 2 * (r * P0 + x * Q0) + (r * r + x * x) * S)
    sols = solve_discrete(f)
    top = sols[0]
    assert top.P0 == pytest.approx(P0, abs=1e-10)
    assert top.Q0 == pytest.approx(Q0, abs=1e-10)
    assert top.v_end == pytest.approx(v1, abs=1e-10)
    sw = forward_sweep((P0, Q0), f)
    assert sw.terminal == pytest.approx((0.0, 0.0), abs=1e-10)


def test_single_aggregated_load_has_no_solution_at_half_length():
    # lumped load 0.5 + 0.25j behind 0.5 + 0.5j exceeds the one-bus power limit
    f = build_discrete(BASE, 1)
    assert solve_discrete(f) == []
    assert np.all(discrete_residuals(np.linspace(0.05, 1.5, 300), f) > 0)


def test_forward_sweep_with_ode_head_flows():
    N = 1000
    ref = find_branches(ShootingProblem(BASE, tol=1e-12, res_tol=1e-9)).by_voltage()[0]
    sw = forward_sweep((ref.P0, ref.Q0), build_discrete(BASE, N))
    assert sw.complete
    assert max(abs(v) for v in sw.terminal) <= 1.0 / N


def test_trivial_feeder_unique_solution():
    sols = solve_discrete(build_discrete(FeederParams(p=0.0, control=ConstantQ(0.0), length=1.0), 20))
    assert len(sols) == 1
    s = sols[0]
    assert np.allclose(s.v, 1.0, atol=1e-12) and np.allclose(s.P, 0.0, atol=1e-12)


def test_base_solutions_track_ode_branches(base_table):
    N = 400
    sols = solve_discrete(build_discrete(BASE, N))
    ode = solutions_at_length(base_table, 0.5).by_voltage()
    assert len(sols) == len(ode) == 2
    for s, pr in zip(sols, ode):
        assert s.v[0] == 1.0 and s.tail_residual <= 1e-9
        traj = integrate(physical_field(BASE), [0.0, 0.0, pr.v_end], (0.5, 0.0), tol=1e-12)
        ref = traj(s.z)
        for got, col in ((s.P, 0), (s.Q, 1), (s.v, 2)):
            assert np.max(np.abs(got - ref[:, col])) <= 1.0 / N


def test_generation_solutions_reverse_flow():
    sols = solve_discrete(build_discrete(GEN, 400))
    assert len(sols) >= 2
    changes = [np.count_nonzero(np.diff(np.sign(s.P[:-1])) != 0) for s in sols]
    assert changes[0] == 0 and any(c >= 1 for c in changes[1:])


def test_branch_count_matches_scan(generation_table):
    sols = solve_discrete(build_discrete(GEN, 400))
    assert len(sols) == len(solutions_at_length(generation_table, 1.5))


def test_loss_identity_is_exact():
    for params in (BASE, GEN):
        f = build_discrete(params, 50)
        for s in solve_discrete(f):
            S = (s.P[:-1] ** 2 + s.Q[:-1] ** 2) / s.v[:-1] ** 2
            lhs = s.P[0] + np.sum(f.p) - s.P[-1]
            assert lhs == pytest.approx(np.sum(f.r * S), abs=1e-13)


def test_feedback_discrete_solution():
    params = FeederParams(p=1.0, control=VoltageFeedback(0.5, 0.1), length=1.2)
    f = build_discrete(params, 200)
    sols = solve_discrete(f)
    assert len(sols) >= 2
    for s in sols:
        assert s.tail_residual <= 1e-8


def test_backward_recursion_boundary():
    f = build_discrete(BASE, 10)
    P, Q, v = backward_recursion([0.8, 0.9], f)
    assert np.all(P[-1] == 0) and np.all(Q[-1] == 0) and np.array_equal(v[-1], [0.8, 0.9])


def test_convergence_is_first_order():
    rows = convergence_study(BASE, [25, 50, 100, 200])
    sups = [r.sup for r in rows]
    assert all(b <= 1.05 * a for a, b in zip(sups, sups[1:]))
    assert all(1.6 <= a / b <= 2.4 for a, b in zip(sups, sups[1:]))


def test_short_line_errors_vanish():
    short = convergence_study(BASE.with_length(0.05), [50])[0].sup
    long = convergence_study(BASE, [50])[0].sup
    assert short < long / 100


def test_aggregated_load_is_the_coarsest():
    rows = convergence_study(BASE.with_length(0.3), [1, 10, 100])
    assert rows[0].sup == max(r.sup for r in rows)


def test_unsolvable_row_is_nan():
    rows = convergence_study(BASE, [1, 100])
    assert np.isnan(rows[0].sup) and np.isfinite(rows[1].sup)


def test_empty_n_list():
    with pytest.raises(DomainError):
        convergence_study(BASE, [])
