"""Feeder media, power densities and reactive-control schemes.

All quantities are per-unit and, for the homogenized model, densities per unit
feeder length: ``r`` and ``x`` are the series resistance and reactance
densities, ``p`` and ``q`` the real and reactive injection densities
(negative for consumption, positive for generation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class DistflowError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(DistflowError, ValueError):
    """An argument lies outside the domain where the model is defined."""


class UnsupportedControlError(DistflowError):
    """The requested method does not apply to the given control scheme."""


@dataclass(frozen=True)
class ConstantQ:
    """Reactive density independent of voltage."""

    q: float

    def __call__(self, v):
        return self.q if np.ndim(v) == 0 else np.full(np.shape(v), self.q)


@dataclass(frozen=True)
class ZeroPowerFactor:
    """Inverters hold reactive injection at zero."""

    def __call__(self, v):
        return 0.0 if np.ndim(v) == 0 else np.zeros(np.shape(v))


@dataclass(frozen=True)
class VoltageFeedback:
    """Logistic volt-var law ``q(v) = sign * q0 * (1 - 2 / (1 + exp(-4 (v - 1) / delta)))``.

    With ``sign=+1`` the inverter injects reactive power when voltage sags
    below 1 and absorbs it when voltage rises above 1.
    """

    q0: float
    delta: float
    sign: int = 1

    def __post_init__(self):
        if not self.q0 > 0:
            raise DomainError(f"q0 must be positive, got {self.q0}")
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if self.sign not in (1, -1):
            raise DomainError(f"sign must be +1 or -1, got {self.sign}")

    def __call__(self, v):
        arg = -4.0 * (np.asarray(v, dtype=float) - 1.0) / self.delta
        # 1 - 2/(1+e^a) == tanh(a/2); tanh avoids overflow for large |a|
        q = self.sign * self.q0 * np.tanh(0.5 * arg)
        return float(q) if np.ndim(q) == 0 else q


ControlScheme = Union[ConstantQ, ZeroPowerFactor, VoltageFeedback]


@dataclass(frozen=True)
class LowVoltageRamp:
    """Piecewise-linear derating of real power at low voltage.

    The factor is 0 for ``v <= v_cut``, 1 for ``v >= v_full`` and linear in
    between.
    """

    v_cut: float
    v_full: float

    def __post_init__(self):
        if not (0 < self.v_cut < self.v_full):
            raise DomainError(
                f"need 0 < v_cut < v_full, got v_cut={self.v_cut}, v_full={self.v_full}"
            )

    def __call__(self, v):
        f = np.clip((np.asarray(v, dtype=float) - self.v_cut) / (self.v_full - self.v_cut), 0.0, 1.0)
        return float(f) if np.ndim(f) == 0 else f


@dataclass(frozen=True)
class FeederParams:
    """Homogenized feeder: line media, injection densities and length."""

    r: float = 1.0
    x: float = 1.0
    p: float = -1.0
    length: float = 1.0
    control: ControlScheme = field(default_factory=lambda: ConstantQ(-0.5))
    p_regularization: LowVoltageRamp | None = None

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError(f"r must be positive, got {self.r}")
        if not self.x > 0:
            raise DomainError(f"x must be positive, got {self.x}")
        if not self.length >= 0:
            raise DomainError(f"feeder length must be non-negative, got {self.length}")
        if not math.isfinite(self.p):
            raise DomainError(f"p must be finite, got {self.p}")

    @property
    def is_voltage_dependent(self) -> bool:
        return isinstance(self.control, VoltageFeedback) or self.p_regularization is not None

    def with_length(self, length: float) -> FeederParams:
        return FeederParams(self.r, self.x, self.p, length, self.control, self.p_regularization)


@dataclass(frozen=True)
class RescaledParams:
    """Dimensionless parameters of the rescaled Cauchy problem.

    ``sign_p`` is the sign of the real-power density, ``A = q/|p|`` and
    ``B = x/r``.
    """

    sign_p: int
    A: float
    B: float

    def __post_init__(self):
        if self.sign_p not in (1, -1):
            raise DomainError(f"sign_p must be +1 or -1, got {self.sign_p}")
        if not self.B > 0:
            raise DomainError(f"B must be positive, got {self.B}")
        if not math.isfinite(self.A):
            raise DomainError(f"A must be finite, got {self.A}")


def control_q(scheme: ControlScheme, v, p: float | None = None):
    """Reactive injection density produced by ``scheme`` at voltage ``v``.

    ``p`` is accepted for call-site symmetry with :func:`effective_p`; none of
    the supported schemes depend on it.
    """
    if isinstance(scheme, VoltageFeedback) and np.any(np.asarray(v) <= 0):
        raise DomainError("voltage feedback control needs v > 0")
    return scheme(v)


def effective_p(params: FeederParams, v):
    """Real injection density at voltage ``v``, derated by the low-voltage ramp if any."""
    if params.p_regularization is None:
        return params.p if np.ndim(v) == 0 else np.full(np.shape(v), params.p)
    return params.p * params.p_regularization(v)


def rescaled_params(params: FeederParams) -> RescaledParams:
    """Collapse a constant-injection feeder to ``(sign p, q/|p|, x/r)``."""
    if isinstance(params.control, VoltageFeedback):
        raise UnsupportedControlError(
            "rescaling needs constant reactive injection; voltage feedback control "
            "must be solved by shooting"
        )
    if params.p_regularization is not None:
        raise UnsupportedControlError(
            "rescaling needs constant real injection; a low-voltage ramp must be "
            "solved by shooting"
        )
    if params.p == 0:
        raise DomainError("rescaling needs p != 0")
    q = params.control.q if isinstance(params.control, ConstantQ) else 0.0
    return RescaledParams(int(math.copysign(1, params.p)), q / abs(params.p), params.x / params.r)
