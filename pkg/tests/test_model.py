import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from distflow import (ConstantQ, DomainError, FeederParams, LowVoltageRamp, RescaledParams,
                      UnsupportedControlError, VoltageFeedback, ZeroPowerFactor, control_q,
                      effective_p, rescaled_params)


def test_feedback_vanishes_at_nominal_voltage():
    assert control_q(VoltageFeedback(0.5, 0.1), 1.0) == 0.0


def test_zero_power_factor_is_zero_everywhere():
    assert control_q(ZeroPowerFactor(), 0.7) == 0.0
    assert np.all(control_q(ZeroPowerFactor(), np.array([0.5, 1.0, 1.5])) == 0.0)


def test_constant_q():
    assert control_q(ConstantQ(-0.5), 0.9) == -0.5


def test_feedback_saturates_at_high_voltage():
    assert control_q(VoltageFeedback(0.5, 0.1), 50.0) == pytest.approx(-0.5, abs=1e-15)
    assert control_q(VoltageFeedback(0.5, 0.1, sign=-1), 50.0) == pytest.approx(0.5, abs=1e-15)


def test_feedback_rejects_nonpositive_voltage():
    with pytest.raises(DomainError):
        control_q(VoltageFeedback(0.5, 0.1), 0.0)


@pytest.mark.parametrize("q0, delta", [(0.0, 0.1), (-1.0, 0.1), (0.5, 0.0)])
def test_feedback_validation(q0, delta):
    with pytest.raises(DomainError):
        VoltageFeedback(q0, delta)


@given(st.floats(0.0, 0.99), st.floats(0.01, 2.0), st.floats(0.01, 5.0))
def test_feedback_is_odd_about_one(d, q0, delta):
    law = VoltageFeedback(q0, delta)
    hi = 1.0 + d
    lo = 1.0 - (hi - 1.0)  # both offsets exactly representable
    assert control_q(law, hi) == pytest.approx(-control_q(law, lo), rel=1e-12, abs=1e-300)


@given(st.floats(1e-3, 10.0), st.floats(0.01, 2.0), st.floats(0.01, 5.0))
def test_feedback_capacity_bound(v, q0, delta):
    assert abs(control_q(VoltageFeedback(q0, delta), v)) <= q0


def test_effective_p_without_ramp():
    assert effective_p(FeederParams(p=1.0), 0.3) == 1.0


def test_effective_p_ramp():
    params = FeederParams(p=1.0, p_regularization=LowVoltageRamp(0.3, 0.7))
    assert effective_p(params, 0.5) == pytest.approx(0.5)
    assert effective_p(params, 0.1) == 0.0
    assert effective_p(params, 0.9) == 1.0


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_ramp_monotone_and_bounded(a, b):
    ramp = LowVoltageRamp(0.3, 0.7)
    lo, hi = sorted((a, b))
    assert 0.0 <= ramp(lo) <= ramp(hi) <= 1.0


def test_ramp_validation():
    with pytest.raises(DomainError):
        LowVoltageRamp(0.7, 0.3)


def test_rescaled_params_base():
    assert rescaled_params(FeederParams(p=-1, control=ConstantQ(-0.5))) == RescaledParams(-1, -0.5, 1.0)


def test_rescaled_params_zero_pf_generation():
    assert rescaled_params(FeederParams(p=1, control=ZeroPowerFactor())) == RescaledParams(1, 0.0, 1.0)


@given(st.floats(1e-3, 1e3), st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), st.floats(-5, 5),
       st.floats(0.1, 10))
def test_rescaled_params_scale_invariant(lam, p, q, x):
    a = rescaled_params(FeederParams(x=x, p=p, control=ConstantQ(q)))
    b = rescaled_params(FeederParams(x=x, p=lam * p, control=ConstantQ(lam * q)))
    assert a.sign_p == b.sign_p and a.B == b.B
    assert b.A == pytest.approx(a.A, rel=1e-12, abs=1e-300)


def test_rescaled_params_rejects_voltage_dependence():
    with pytest.raises(UnsupportedControlError):
        rescaled_params(FeederParams(control=VoltageFeedback(0.5, 0.1)))
    with pytest.raises(UnsupportedControlError):
        rescaled_params(FeederParams(p=1.0, p_regularization=LowVoltageRamp(0.3, 0.7)))
    with pytest.raises(DomainError):
        rescaled_params(FeederParams(p=0.0))


@pytest.mark.parametrize("kw", [dict(r=0.0), dict(x=-1.0), dict(length=-0.1), dict(p=math.inf)])
def test_feeder_params_validation(kw):
    with pytest.raises(DomainError):
        FeederParams(**kw)
