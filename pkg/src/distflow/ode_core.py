"""DistFlow vector fields and an adaptive Dormand-Prince integrator.

The physical system, with ``S = (P^2 + Q^2) / v^2``::

    dP/dz = p - r S,   dQ/dz = q - x S,   dv/dz = -(r P + x Q) / v

and its rescaled counterpart in ``s`` (measured from the feeder end)::

    d(rho)/ds = S' - sign_p,   d(tau)/ds = B S' - A,   d(upsilon)/ds = (rho + B tau) / upsilon

with ``S' = (rho^2 + tau^2) / upsilon^2``.

Vector fields take ``(t, y)`` where ``y`` has shape ``(dim,)`` or
``(dim, m)``; the batched form lets one call advance many independent
trajectories.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .model import DistflowError, FeederParams, RescaledParams, effective_p

DEFAULT_TOL = 1e-9
DEFAULT_ATOL = 1e-12
DEFAULT_V_FLOOR = 0.05

VectorField = Callable[[object, np.ndarray], np.ndarray]


class SingularityError(DistflowError, ValueError):
    """Voltage is non-positive where the equations divide by it."""


class LineState(NamedTuple):
    P: float
    Q: float
    v: float


class RescaledState(NamedTuple):
    rho: float
    tau: float
    upsilon: float


class Termination(str, enum.Enum):
    REACHED_END = "reached-end"
    VOLTAGE_FLOOR = "voltage-floor"
    STEP_FAILURE = "step-failure"


# --------------------------------------------------------------------------- fields


def physical_field(params: FeederParams, aux: bool = False) -> VectorField:
    """Vectorized right-hand side of the physical DistFlow ODEs.

    With ``aux=True`` the state carries two running integrals after
    ``(P, Q, v)``: the loss ``int r S dz`` and the injected real power
    ``int p_eff dz``.
    """
    r, x = params.r, params.x
    control = params.control

    def f(t, y):
        P, Q, v = y[0], y[1], y[2]
        with np.errstate(all="ignore"):
            v = np.where(v > 0, v, np.nan)
            S = (P * P + Q * Q) / (v * v)
            p_eff = effective_p(params, v)
            q_eff = control(v)
            rows = [p_eff - r * S, q_eff - x * S, -(r * P + x * Q) / v]
            if aux:
                rows += [r * S, p_eff + 0.0 * S]
        return np.array(rows)

    return f


def rescaled_field(rp: RescaledParams, aux: bool = False) -> VectorField:
    """Vectorized right-hand side of the rescaled system, forward in ``s``.

    With ``aux=True`` a fourth component accumulates ``int S' ds``.
    """
    sign_p, A, B = rp.sign_p, rp.A, rp.B

    def f(t, y):
        rho, tau, u = y[0], y[1], y[2]
        with np.errstate(all="ignore"):
            u = np.where(u > 0, u, np.nan)
            S = (rho * rho + tau * tau) / (u * u)
            rows = [S - sign_p, B * S - A, (rho + B * tau) / u]
            if aux:
                rows.append(S)
        return np.array(rows)

    return f


def rhs_physical(state, params: FeederParams) -> LineState:
    """d(P, Q, v)/dz at a single state."""
    P, Q, v = state
    if not v > 0:
        raise SingularityError(f"voltage must be positive, got {v}")
    d = physical_field(params)(0.0, np.array([P, Q, v], dtype=float))
    return LineState(*map(float, d))


def rhs_rescaled(state, rp: RescaledParams) -> RescaledState:
    """d(rho, tau, upsilon)/ds at a single state."""
    rho, tau, u = state
    if not u > 0:
        raise SingularityError(f"rescaled voltage must be positive, got {u}")
    d = rescaled_field(rp)(0.0, np.array([rho, tau, u], dtype=float))
    return RescaledState(*map(float, d))


# --------------------------------------------------------------------------- integrator

# Dormand-Prince 5(4) with Shampine's free 4th-order interpolant.
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


def _dp_step(f, t, y, h, k1):
    """One Dormand-Prince step; ``h`` is a scalar or per-column array."""
    K = [k1]
    for i in range(1, 6):
        dy = sum(a * k for a, k in zip(_A[i], K))
        K.append(f(t + _C[i] * h, y + h * dy))
    y_new = y + h * sum(b * k for b, k in zip(_B, K) if b)
    K.append(f(t + h, y_new))
    err = h * sum(e * k for e, k in zip(_E, K) if e)
    return y_new, err, K


def _error_norm(err, y, y_new, rtol, atol):
    with np.errstate(all="ignore"):
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        return np.max(np.abs(err) / scale, axis=0)


def _step_factor(err_norm):
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = _SAFETY * np.power(err_norm, -0.2)
    return np.clip(np.where(np.isfinite(fac), fac, _MAX_FACTOR), _MIN_FACTOR, _MAX_FACTOR)


def _initial_step(f, t0, y0, f0, direction, span_len, rtol, atol, max_step):
    """Hairer-Norsett-Wanner starting step, per column if batched."""
    scale = atol + rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale, axis=0)
    d1 = np.max(np.abs(f0) / scale, axis=0)
    with np.errstate(all="ignore"):
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
    h0 = np.minimum(h0, span_len)
    f1 = f(t0 + direction * h0, y0 + direction * h0 * f0)
    with np.errstate(all="ignore"):
        d2 = np.max(np.abs(f1 - f0) / scale, axis=0) / h0
        dmax = np.maximum(d1, d2)
        h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / dmax) ** 0.2)
    h1 = np.where(np.isfinite(h1), h1, h0)
    return np.minimum.reduce([100 * h0, h1, np.broadcast_to(span_len, np.shape(h0)),
                              np.broadcast_to(max_step, np.shape(h0))])


@dataclass(frozen=True)
class Trajectory:
    """Accepted integrator nodes plus the piecewise-quartic dense output."""

    t: np.ndarray
    y: np.ndarray
    reason: Termination
    _h: np.ndarray
    _q: np.ndarray

    @property
    def end(self) -> np.ndarray:
        return self.y[-1]

    def __len__(self):
        return len(self.t)

    def __call__(self, t):
        """Interpolate the state at ``t`` (scalar or 1-D array) inside the span."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if len(self.t) == 1:
            out = np.repeat(self.y[:1], len(t), axis=0)
            return out[0] if scalar else out
        increasing = self.t[-1] > self.t[0]
        nodes = self.t if increasing else -self.t
        key = t if increasing else -t
        idx = np.clip(np.searchsorted(nodes, key, side="right") - 1, 0, len(self.t) - 2)
        theta = (t - self.t[idx]) / self._h[idx]
        powers = np.stack([theta, theta ** 2, theta ** 3, theta ** 4], axis=-1)
        out = self.y[idx] + self._h[idx, None] * np.einsum("ndk,nk->nd", self._q[idx], powers)
        return out[0] if scalar else out


def integrate(
    rhs: VectorField,
    initial,
    span,
    tol: float = DEFAULT_TOL,
    v_floor: float = DEFAULT_V_FLOOR,
    *,
    atol: float = DEFAULT_ATOL,
    v_index: int = 2,
    max_step: float = math.inf,
    max_steps: int = 200_000,
) -> Trajectory:
    """Integrate ``rhs`` over ``span = (a, b)`` (``b < a`` integrates backward).

    Stops early when component ``v_index`` falls to ``v_floor``, locating the
    crossing on the dense output. Step-size collapse is reported through
    ``Trajectory.reason`` rather than raised.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    a, b = float(span[0]), float(span[1])
    y0 = np.asarray(initial, dtype=float)
    if y0[v_index] <= v_floor:
        raise ValueError(f"initial voltage {y0[v_index]} is not above the floor {v_floor}")
    if a == b:
        return Trajectory(np.array([a]), y0[None, :].copy(), Termination.REACHED_END,
                          np.zeros(0), np.zeros((0, len(y0), 4)))
    direction = 1.0 if b > a else -1.0
    span_len = abs(b - a)

    t, y = a, y0
    f0 = rhs(t, y)
    h = float(_initial_step(rhs, t, y, f0, direction, span_len, tol, atol, max_step))
    ts, ys, hs, qs = [t], [y], [], []
    reason = Termination.REACHED_END

    while True:
        if len(hs) >= max_steps:
            reason = Termination.STEP_FAILURE
            break
        remaining = abs(b - t)
        h = min(h, remaining, max_step)
        if remaining - h <= 1e-12 * max(1.0, abs(b)):
            h = remaining  # absorb round-off so the last node lands on b
        if h < 1e-13 * max(1.0, abs(t)):
            reason = Termination.STEP_FAILURE
            break
        hd = direction * h
        y_new, err, K = _dp_step(rhs, t, y, hd, f0)
        en = float(_error_norm(err, y, y_new, tol, atol))
        if not (np.all(np.isfinite(y_new)) and np.isfinite(en)):
            h *= 0.25
            continue
        if en > 1.0:
            h *= float(_step_factor(en))
            continue

        q = np.array(K).T @ _P
        t_new = b if h == remaining else t + hd
        if y_new[v_index] <= v_floor:
            theta = _floor_crossing(y, q, hd, v_index, v_floor)
            t_new = t + theta * hd
            y_new = y + hd * q @ np.array([theta, theta ** 2, theta ** 3, theta ** 4])
            ts.append(t_new); ys.append(y_new); hs.append(hd); qs.append(q)
            reason = Termination.VOLTAGE_FLOOR
            break
        ts.append(t_new); ys.append(y_new); hs.append(hd); qs.append(q)
        if t_new == b:
            break
        t, y, f0 = t_new, y_new, K[-1]
        h *= float(_step_factor(en))

    return Trajectory(np.array(ts), np.array(ys), reason, np.array(hs),
                      np.array(qs) if qs else np.zeros((0, len(y0), 4)))


def _floor_crossing(y, q, h, v_index, v_floor):
    """Fraction of the step where the interpolated voltage reaches ``v_floor``."""
    coeffs = h * q[v_index]

    def v_at(theta):
        return y[v_index] + coeffs @ np.array([theta, theta ** 2, theta ** 3, theta ** 4])

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if v_at(mid) > v_floor:
            lo = mid
        else:
            hi = mid
    return hi


def integrate_endpoints(
    rhs: VectorField,
    initial: np.ndarray,
    span,
    tol: float = DEFAULT_TOL,
    v_floor: float = DEFAULT_V_FLOOR,
    *,
    atol: float = DEFAULT_ATOL,
    v_index: int = 2,
    max_steps: int = 200_000,
):
    """Integrate ``m`` independent columns of ``initial`` (shape ``(dim, m)``).

    Each column carries its own adaptive step. Returns ``(y_end, reasons)``;
    columns that stopped early have ``NaN`` end states and ``reasons`` holds
    the :class:`Termination` values as strings.
    """
    y = np.array(initial, dtype=float)
    dim, m = y.shape
    a, b = float(span[0]), float(span[1])
    reasons = np.full(m, Termination.REACHED_END.value, dtype=object)
    if a == b or m == 0:
        return y, reasons
    direction = 1.0 if b > a else -1.0
    t = np.full(m, a)
    active = y[v_index] > v_floor
    reasons[~active] = Termination.VOLTAGE_FLOOR.value
    y[:, ~active] = np.nan

    f0 = rhs(t, y)
    h = _initial_step(rhs, a, y, f0, direction, abs(b - a), tol, atol, math.inf)
    h = np.where(np.isfinite(h), h, 1e-6 * abs(b - a))
    steps = 0
    while active.any():
        steps += 1
        idx = np.flatnonzero(active)
        ti, yi = t[idx], y[:, idx]
        remaining = np.abs(b - ti)
        hi = np.minimum(h[idx], remaining)
        hi = np.where(remaining - hi <= 1e-12 * max(1.0, abs(b)), remaining, hi)
        failed = hi < 1e-13 * np.maximum(1.0, np.abs(ti))
        if steps > max_steps:
            failed[:] = True
        if failed.any():
            gone = idx[failed]
            reasons[gone] = Termination.STEP_FAILURE.value
            y[:, gone] = np.nan
            active[gone] = False
            keep = ~failed
            idx, ti, yi, hi, remaining = idx[keep], ti[keep], yi[:, keep], hi[keep], remaining[keep]
            if idx.size == 0:
                break
        hd = direction * hi
        y_new, err, _ = _dp_step(rhs, ti, yi, hd, rhs(ti, yi))
        en = _error_norm(err, yi, y_new, tol, atol)
        finite = np.all(np.isfinite(y_new), axis=0) & np.isfinite(en)
        ok = finite & (en <= 1.0)

        acc = idx[ok]
        t[acc] = np.where(hi[ok] == remaining[ok], b, ti[ok] + hd[ok])
        y[:, acc] = y_new[:, ok]
        floor = acc[y[v_index, acc] <= v_floor]
        reasons[floor] = Termination.VOLTAGE_FLOOR.value
        y[:, floor] = np.nan
        active[floor] = False
        active[acc[t[acc] == b]] = False

        fac = _step_factor(en)
        fac = np.where(finite, np.where(ok, fac, np.minimum(fac, 1.0)), 0.25)
        h[idx] = hi * fac
    return y, reasons
