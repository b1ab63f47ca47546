import math

import numpy as np
import pytest

from conftest import CRITICAL_LENGTH_BASE, CRITICAL_LENGTH_ZERO_PF
from distflow import (ConstantQ, DomainError, FeederParams, RescaledParams, critical_length,
                      integrate, nose_curve, physical_field, recompute_physical, scan,
                      scan_feeder, solutions_at_length)


def test_first_order_start():
    s_max = 1e-3
    table = scan(RescaledParams(-1, -0.5, 1.0), s_max)
    assert table.s[-1] == s_max
    assert table.rho[-1] == pytest.approx(s_max, rel=1e-5)
    assert table.tau[-1] == pytest.approx(0.5 * s_max, rel=1e-5)
    assert table.upsilon[-1] == pytest.approx(1.0, abs=1e-5)


def test_recompute_physical_example():
    L, v_end, P0, Q0 = recompute_physical((0.2, 0.21, 0.10, 0.98), -1.0, 1.0)
    assert (L, v_end, P0, Q0) == pytest.approx((0.20408, 1.02041, 0.21429, 0.10204), abs=1e-5)


def test_recompute_physical_empty_feeder():
    assert recompute_physical((0.0, 0.0, 0.0, 1.0), -1.0, 1.0) == (0.0, 1.0, 0.0, 0.0)


def test_table_invariants(base_table):
    assert base_table.s[0] == 0 and np.all(np.diff(base_table.s) > 0)
    assert np.all(base_table.upsilon > base_table.v_floor)
    k = len(base_table) // 3
    sample = (base_table.s[k], base_table.rho[k], base_table.tau[k], base_table.upsilon[k])
    got = recompute_physical(sample, base_table.p, base_table.r)
    assert got == (base_table.L[k], base_table.v_end[k], base_table.P0[k], base_table.Q0[k])


@pytest.mark.parametrize("k", [50, 200, 400, 700])
def test_physical_map_round_trips(base_table, k):
    L, v_end, P0, Q0 = base_table.L[k], base_table.v_end[k], base_table.P0[k], base_table.Q0[k]
    params = FeederParams(p=-1, control=ConstantQ(-0.5))
    end = integrate(physical_field(params), [P0, Q0, 1.0], (0.0, L), tol=1e-11).end
    assert end == pytest.approx([0.0, 0.0, v_end], abs=1e-7)


def test_base_case_two_solutions(base_table):
    sols = solutions_at_length(base_table, 0.5)
    assert len(sols) == 2
    hi, lo = sols.by_voltage()
    assert hi.stable and not lo.stable
    assert sols.critical_length == pytest.approx(CRITICAL_LENGTH_BASE, abs=1e-9)


def test_beyond_critical_is_empty(base_table):
    assert len(solutions_at_length(base_table, 0.7)) == 0


def test_solutions_satisfy_boundary_conditions(base_table, generation_table):
    for table, params, L in ((base_table, FeederParams(p=-1, control=ConstantQ(-0.5)), 0.5),
                             (generation_table, FeederParams(p=1, control=ConstantQ(0.5)), 1.5)):
        for pr in solutions_at_length(table, L):
            end = integrate(physical_field(params), [pr.P0, pr.Q0, 1.0], (0.0, L)).end
            assert abs(pr.v[0] - 1.0) <= 100 * table.tol
            assert np.max(np.abs(end - [0.0, 0.0, pr.v_end])) <= 100 * table.tol


def test_generation_multiplicity_and_reversal(generation_table):
    sols = solutions_at_length(generation_table, 1.5).by_voltage()
    assert len(sols) >= 2
    assert sols[0].reversals == 0
    assert sols[1].reversals >= 1


def test_critical_length_matches_oracle(base_table):
    crit = critical_length(base_table)
    assert crit.converged
    assert crit.length == pytest.approx(CRITICAL_LENGTH_BASE, abs=1e-9)


def test_zero_pf_shifts_nose_right(base_table, zero_pf_table):
    zero = critical_length(zero_pf_table).length
    assert zero == pytest.approx(CRITICAL_LENGTH_ZERO_PF, abs=1e-9)
    assert zero > critical_length(base_table).length


def test_truncated_scan_reports_lower_bound():
    crit = critical_length(scan(RescaledParams(-1, -0.5, 1.0), 0.5))
    assert not crit.converged
    assert crit.length < CRITICAL_LENGTH_BASE


def test_zero_density_rejected():
    with pytest.raises(DomainError):
        scan_feeder(FeederParams(p=0.0, control=ConstantQ(0.0)), 1.0)


def test_fold_counts(base_table, generation_table):
    assert len(nose_curve(base_table).folds) == 1
    assert len(nose_curve(generation_table).folds) > 1
    assert len(nose_curve(scan(RescaledParams(-1, -0.5, 1.0), 0.2)).folds) == 0


def test_fold_refinement_is_resolution_independent(base_table):
    coarse = nose_curve(scan(RescaledParams(-1, -0.5, 1.0), 3.0))
    fine = nose_curve(base_table)
    assert coarse.fold_L[0] == pytest.approx(fine.fold_L[0], abs=1e-10)


def test_scaling_symmetry():
    a = scan_feeder(FeederParams(p=-1, control=ConstantQ(-0.5)), 5.0)
    b = scan_feeder(FeederParams(p=-4, control=ConstantQ(-2.0)), 5.0)
    assert np.array_equal(a.s, b.s)
    assert np.max(np.abs(a.v_end - b.v_end)) <= 1e-10
    assert np.allclose(b.L, a.L / 2, rtol=1e-14)
    assert np.allclose(b.P0, 2 * a.P0, rtol=1e-14)


def test_upsilon_grows_in_consumption(base_table):
    # upsilon(s) = v(z)/v(L): it grows from the feeder end toward the head
    assert np.all(np.diff(base_table.upsilon) >= 0)


@pytest.mark.xfail(strict=True, reason="upsilon rises along the consumption scan; the "
                   "non-increasing reading has the direction reversed")
def test_upsilon_non_increasing_in_consumption(base_table):
    assert np.all(np.diff(base_table.upsilon) <= 0)


def test_length_at_matches_samples(base_table):
    assert np.allclose(base_table.length_at(base_table.s), base_table.L, rtol=1e-14, atol=0)
    assert base_table.length_scale == 1.0 / math.sqrt(1.0)
