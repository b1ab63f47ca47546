"""Bus-by-bus DistFlow recursion and its convergence to the ODE model.

Buses are ``k = 0..N`` with the substation at bus 0. Segment ``k`` joins
buses ``k`` and ``k+1`` and carries ``(P_k, Q_k)`` out of bus ``k``; the
lumped injection ``(p_k, q_k)`` sits at bus ``k+1``::

    P_{k+1} - P_k = p_k - r_k S_k
    Q_{k+1} - Q_k = q_k - x_k S_k
    v_{k+1}^2 - v_k^2 = -2 (r_k P_k + x_k Q_k) + (r_k^2 + x_k^2) S_k

with ``S_k = (P_k^2 + Q_k^2) / v_k^2``, closed by ``v_0 = 1`` and
``P_N = Q_N = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bvp_shooting import ShootingProblem, accept_roots, find_branches, refine_brackets
from .model import DomainError, FeederParams, VoltageFeedback
from .ode_core import DEFAULT_V_FLOOR, integrate, physical_field

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class DiscreteFeeder:
    """Lumped feeder with per-segment impedances and per-bus nominal injections.

    Voltage-dependent control and the low-voltage ramp are evaluated at the
    bus carrying the injection, scaled by that segment's length ``l[k]``.
    """

    r: np.ndarray
    x: np.ndarray
    p: np.ndarray
    q: np.ndarray
    l: np.ndarray
    params: FeederParams

    def __post_init__(self):
        if not (np.all(self.r > 0) and np.all(self.x > 0)):
            raise DomainError("segment impedances must be positive")
        n = len(self.r)
        if not all(len(a) == n for a in (self.x, self.p, self.q, self.l)):
            raise DomainError("per-segment arrays must have equal length")

    @property
    def N(self) -> int:
        return len(self.r)

    @property
    def positions(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.l)])

    def injections(self, k: int, v):
        """``(p_k, q_k)`` at bus ``k+1`` given its voltage ``v``."""
        params = self.params
        p_k = self.p[k]
        if params.p_regularization is not None:
            p_k = p_k * params.p_regularization(v)
        if isinstance(params.control, VoltageFeedback):
            q_k = params.control(v) * self.l[k]
        else:
            q_k = self.q[k] + 0.0 * np.asarray(v)
        return p_k + 0.0 * np.asarray(v), q_k


@dataclass(frozen=True)
class SweepResult:
    P: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    complete: bool

    @property
    def terminal(self) -> tuple[float, float]:
        return float(self.P[-1]), float(self.Q[-1])


@dataclass(frozen=True)
class DiscreteSolution:
    """Bus states ``(P_k, Q_k, v_k)`` for ``k = 0..N`` with ``v_0 = 1``."""

    P: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    z: np.ndarray
    v_end: float
    head_residual: float
    tail_residual: float

    @property
    def P0(self) -> float:
        return float(self.P[0])

    @property
    def Q0(self) -> float:
        return float(self.Q[0])


def build_discrete(params: FeederParams, N: int, lengths=None) -> DiscreteFeeder:
    """Lump the homogenized feeder into ``N`` segments.

    Segments are uniform (``L/N``) unless explicit ``lengths`` are given.
    """
    if N < 1:
        raise DomainError(f"N must be at least 1, got {N}")
    if lengths is None:
        l = np.full(N, params.length / N)
    else:
        l = np.asarray(lengths, dtype=float)
        if len(l) != N or np.any(l <= 0):
            raise DomainError("lengths must be N positive values")
    q_density = 0.0 if isinstance(params.control, VoltageFeedback) else params.control(1.0)
    return DiscreteFeeder(params.r * l, params.x * l, params.p * l, q_density * l, l, params)


def forward_sweep(head, feeder: DiscreteFeeder, v_floor: float = DEFAULT_V_FLOOR) -> SweepResult:
    """Run the recursion from the substation with ``v_0 = 1`` and head flows ``head``.

    Stops and flags ``complete=False`` if a bus voltage drops to ``v_floor``.
    """
    N = feeder.N
    P = np.full(N + 1, np.nan)
    Q = np.full(N + 1, np.nan)
    v = np.full(N + 1, np.nan)
    P[0], Q[0], v[0] = float(head[0]), float(head[1]), 1.0
    for k in range(N):
        r, x = feeder.r[k], feeder.x[k]
        S = (P[k] ** 2 + Q[k] ** 2) / v[k] ** 2
        w = v[k] ** 2 - 2 * (r * P[k] + x * Q[k]) + (r * r + x * x) * S
        if not w > v_floor ** 2:
            return SweepResult(P, Q, v, False)
        v[k + 1] = math.sqrt(w)
        p_k, q_k = feeder.injections(k, v[k + 1])
        P[k + 1] = P[k] + float(p_k) - r * S
        Q[k + 1] = Q[k] + float(q_k) - x * S
    return SweepResult(P, Q, v, True)


def _backward_step(P1, Q1, w1, p, q, r, x):
    """Solve one segment backward for ``(P_k, Q_k, v_k^2)`` by damped Newton.

    All arguments except ``r`` and ``x`` are arrays over independent guesses.
    Returns NaN where Newton fails.
    """
    z2 = r * r + x * x
    S1 = (P1 * P1 + Q1 * Q1) / w1
    # predictor: the explicit map with losses frozen at the known bus
    P = P1 - p + r * S1
    Q = Q1 - q + x * S1
    w = w1 + 2 * (r * P + x * Q) - z2 * S1

    def residual(P, Q, w):
        S = (P * P + Q * Q) / w
        return (P - P1 + p - r * S, Q - Q1 + q - x * S, w - w1 - 2 * (r * P + x * Q) + z2 * S)

    with np.errstate(all="ignore"):
        F = residual(P, Q, w)
        norm = np.maximum.reduce([np.abs(f) for f in F])
        for _ in range(NEWTON_MAX_ITER):
            if np.all(~(norm > NEWTON_TOL)):
                break
            S = (P * P + Q * Q) / w
            sP, sQ, sw = 2 * P / w, 2 * Q / w, -S / w
            a11, a12, a13 = 1 - r * sP, -r * sQ, -r * sw
            a21, a22, a23 = -x * sP, 1 - x * sQ, -x * sw
            a31, a32, a33 = -2 * r + z2 * sP, -2 * x + z2 * sQ, 1 + z2 * sw
            det = (a11 * (a22 * a33 - a23 * a32) - a12 * (a21 * a33 - a23 * a31)
                   + a13 * (a21 * a32 - a22 * a31))
            b1, b2, b3 = (-f for f in F)
            dP = (b1 * (a22 * a33 - a23 * a32) - a12 * (b2 * a33 - a23 * b3)
                  + a13 * (b2 * a32 - a22 * b3)) / det
            dQ = (a11 * (b2 * a33 - a23 * b3) - b1 * (a21 * a33 - a23 * a31)
                  + a13 * (a21 * b3 - b2 * a31)) / det
            dw = (a11 * (a22 * b3 - b2 * a32) - a12 * (a21 * b3 - b2 * a31)
                  + b1 * (a21 * a32 - a22 * a31)) / det
            lam = np.ones_like(P)
            active = norm > NEWTON_TOL
            for _ in range(30):
                Pn, Qn, wn = P + lam * dP, Q + lam * dQ, w + lam * dw
                Fn = residual(Pn, Qn, wn)
                nn = np.maximum.reduce([np.abs(f) for f in Fn])
                bad = active & ~((wn > 0) & (nn < norm))
                if not bad.any():
                    break
                lam = np.where(bad, 0.5 * lam, lam)
            step = active & (wn > 0) & (nn < norm)
            P, Q, w = np.where(step, Pn, P), np.where(step, Qn, Q), np.where(step, wn, w)
            F = tuple(np.where(step, fn, f) for fn, f in zip(Fn, F))
            norm = np.where(step, nn, np.where(active, np.nan, norm))
        ok = norm <= NEWTON_TOL * 1e3
    return np.where(ok, P, np.nan), np.where(ok, Q, np.nan), np.where(ok, w, np.nan)


def backward_recursion(v_ends, feeder: DiscreteFeeder, v_floor: float = DEFAULT_V_FLOOR):
    """Recursion from the far end for each trial ``v_N``; returns ``(P, Q, v)`` of shape ``(N+1, m)``.

    Columns that fail (Newton breakdown or voltage at the floor) are NaN from
    the failing bus toward the head.
    """
    v_ends = np.atleast_1d(np.asarray(v_ends, dtype=float))
    N, m = feeder.N, v_ends.size
    P = np.full((N + 1, m), np.nan)
    Q = np.full((N + 1, m), np.nan)
    v = np.full((N + 1, m), np.nan)
    P[N], Q[N], v[N] = 0.0, 0.0, v_ends
    for k in range(N - 1, -1, -1):
        p_k, q_k = feeder.injections(k, v[k + 1])
        Pk, Qk, wk = _backward_step(P[k + 1], Q[k + 1], v[k + 1] ** 2, p_k, q_k,
                                    feeder.r[k], feeder.x[k])
        with np.errstate(invalid="ignore"):
            vk = np.sqrt(wk)
            vk = np.where(vk > v_floor, vk, np.nan)
        P[k], Q[k], v[k] = Pk, Qk, vk
    return P, Q, v


def discrete_residuals(v_ends, feeder: DiscreteFeeder, v_floor: float = DEFAULT_V_FLOOR):
    """``v_0 - 1`` for each trial ``v_N``; infeasible guesses give ``-inf``."""
    _, _, v = backward_recursion(v_ends, feeder, v_floor)
    res = v[0] - 1.0
    return np.where(np.isnan(res), -math.inf, res)


def solve_discrete(feeder: DiscreteFeeder, v_end_range=(0.05, 2.0), n: int = 400,
                   v_floor: float = DEFAULT_V_FLOOR, xtol: float = 1e-13,
                   res_tol: float = 1e-9) -> list[DiscreteSolution]:
    """All discrete solutions with ``v_N`` in ``v_end_range``, highest first.

    Each root's head flows are then swept forward from exactly ``v_0 = 1``;
    the stored states come from that sweep and ``tail_residual`` is
    ``max(|P_N|, |Q_N|)``.
    """
    v_lo, v_hi = v_end_range
    if not (0 < v_lo < v_hi) or n < 2:
        raise DomainError("need 0 < v_lo < v_hi and n >= 2")
    grid = np.linspace(v_lo, v_hi, n)
    res = discrete_residuals(grid, feeder, v_floor)
    roots = list(grid[res == 0])
    sc = np.flatnonzero((res[:-1] != 0) & (res[1:] != 0) & ((res[:-1] < 0) != (res[1:] < 0)))
    if sc.size:
        refined = refine_brackets(lambda g: discrete_residuals(g, feeder, v_floor),
                                  grid[sc], grid[sc + 1], res[sc], res[sc + 1], xtol)
        roots += [v for v, _ in accept_roots(*refined, res_tol, xtol)]
    roots.sort(reverse=True)
    z = feeder.positions
    out: list[DiscreteSolution] = []
    for root in roots:
        if out and out[-1].v_end - root <= 1e3 * xtol:
            continue
        P, Q, v = (a[:, 0] for a in backward_recursion([root], feeder, v_floor))
        sweep = forward_sweep((P[0], Q[0]), feeder, v_floor)
        if sweep.complete:
            P, Q, v = sweep.P, sweep.Q, sweep.v
            tail = max(abs(P[-1]), abs(Q[-1]))
        else:
            tail = math.inf
        out.append(DiscreteSolution(P, Q, v, z, float(root), abs(float(v[0]) - 1.0), float(tail)))
    return out


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    sup_P: float
    sup_Q: float
    sup_v: float

    @property
    def sup(self) -> float:
        return max(self.sup_P, self.sup_Q, self.sup_v)


def convergence_study(params: FeederParams, N_list, tol: float = 1e-12,
                      v_floor: float = DEFAULT_V_FLOOR, window: float = 0.5,
                      n: int = 81) -> list[ConvergenceRow]:
    """Sup-norm gap between the discrete and ODE top branches for each ``N``.

    The ODE reference is solved by shooting at ``tol``. The discrete top
    branch is the highest root with ``v_N`` between ``v_floor`` and
    ``window`` above the reference end voltage. Rows for ``N`` that cannot
    be solved hold NaN.
    """
    N_list = list(N_list)
    if len(N_list) < 1:
        raise DomainError("N_list must not be empty")
    ref_set = find_branches(ShootingProblem(params, tol=max(tol, 1e-13), v_floor=v_floor,
                                            res_tol=1e-9))
    if not len(ref_set):
        raise DomainError("the ODE model has no solution at this length")
    v_ref = ref_set.by_voltage()[0].v_end
    traj = integrate(physical_field(params), [0.0, 0.0, v_ref], (params.length, 0.0), tol, v_floor)
    rows = []
    for N in N_list:
        feeder = build_discrete(params, N)
        sols = solve_discrete(feeder, (v_floor, v_ref + window), n=n, v_floor=v_floor)
        if not sols:
            rows.append(ConvergenceRow(N, math.nan, math.nan, math.nan))
            continue
        top = sols[0]
        ode = traj(top.z)
        rows.append(ConvergenceRow(
            N,
            float(np.max(np.abs(top.P - ode[:, 0]))),
            float(np.max(np.abs(top.Q - ode[:, 1]))),
            float(np.max(np.abs(top.v - ode[:, 2]))),
        ))
    return rows
