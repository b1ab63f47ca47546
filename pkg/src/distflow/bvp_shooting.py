"""Direct shooting on the end voltage for the mixed two-point problem.

The unknown is ``v(L)``: starting from ``(P, Q, v) = (0, 0, v_end)`` at the
feeder end, the physical ODEs are integrated back to the head and the
mismatch ``v(0) - 1`` is the residual. Being one-dimensional, the residual can
be scanned on a grid to bracket every root in range. This works for any
control scheme, voltage-dependent ones included.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .analysis import _reversals
from .model import DistflowError, DomainError, FeederParams
from .ode_core import (DEFAULT_TOL, DEFAULT_V_FLOOR, Termination, integrate,
                       integrate_endpoints, physical_field)
from .solution import BranchSet, SolutionProfile


class StaleRootError(DistflowError):
    """A supposed end voltage no longer satisfies the head condition."""


@dataclass(frozen=True)
class ShootingProblem:
    params: FeederParams
    v_lo: float = 0.05
    v_hi: float = 2.0
    n: int = 400
    tol: float = DEFAULT_TOL
    v_floor: float = DEFAULT_V_FLOOR
    xtol: float = 1e-12
    res_tol: float = 1e-7
    samples: int = 1001

    def __post_init__(self):
        if not (0 < self.v_lo < self.v_hi):
            raise DomainError(f"need 0 < v_lo < v_hi, got [{self.v_lo}, {self.v_hi}]")
        if self.n < 2:
            raise DomainError(f"grid size must be at least 2, got {self.n}")
        if not (self.tol > 0 and self.xtol > 0 and self.res_tol > 0):
            raise DomainError("tolerances must be positive")


def shoot_residuals(v_ends, params: FeederParams, tol: float = DEFAULT_TOL,
                    v_floor: float = DEFAULT_V_FLOOR) -> np.ndarray:
    """Vectorized :func:`shoot_residual` over an array of end voltages."""
    v_ends = np.atleast_1d(np.asarray(v_ends, dtype=float))
    if params.length == 0:
        return v_ends - 1.0
    m = v_ends.size
    y0 = np.vstack([np.zeros(m), np.zeros(m), v_ends])
    y_end, reasons = integrate_endpoints(physical_field(params), y0, (params.length, 0.0),
                                         tol, v_floor)
    res = y_end[2] - 1.0
    res[reasons == Termination.VOLTAGE_FLOOR.value] = -math.inf
    res[reasons == Termination.STEP_FAILURE.value] = math.nan
    return res


def shoot_residual(v_end_guess: float, params: FeederParams, tol: float = DEFAULT_TOL,
                   v_floor: float = DEFAULT_V_FLOOR) -> float:
    """Head-voltage mismatch ``v(0) - 1`` for a trial end voltage.

    Returns ``-inf`` when the backward pass collapses through ``v_floor``
    (the head would sit below any valid voltage) and ``nan`` on step-size
    failure.
    """
    return float(shoot_residuals([v_end_guess], params, tol, v_floor)[0])


def refine_brackets(fun, a, b, fa, fb, xtol, max_iter=200):
    """Vectorized Illinois false position, falling back to bisection.

    Infinite residuals (voltage-floor sentinels) carry only a sign, so any
    bracket with an infinite end is bisected instead. Returns ``(x, fx,
    other, f_other)``: the last iterate and the opposite end of its final
    bracket (``f_other`` may be Illinois-scaled but keeps sign and
    finiteness).
    """
    a, b, fa, fb = (np.array(v, dtype=float) for v in (a, b, fa, fb))
    done = np.zeros(a.shape, dtype=bool)
    for it in range(max_iter):
        width = np.abs(b - a)
        done |= (width <= xtol * np.maximum(1.0, np.abs(b))) | (fb == 0)
        if done.all():
            break
        idx = np.flatnonzero(~done)
        ai, bi, fai, fbi = a[idx], b[idx], fa[idx], fb[idx]
        mid = 0.5 * (ai + bi)
        with np.errstate(all="ignore"):
            c = bi - fbi * (bi - ai) / (fbi - fai)
        # every third pass bisects so the bracket always shrinks geometrically
        use_mid = ~np.isfinite(c) | (c <= np.minimum(ai, bi)) | (c >= np.maximum(ai, bi)) | (it % 3 == 2)
        c = np.where(use_mid, mid, c)
        fc = fun(c)
        fc = np.where(np.isnan(fc), -math.inf, fc)
        same = np.sign(fc) == np.sign(fbi)
        # Illinois: halve the stale end's value when the same side is replaced twice
        new_a = np.where(same, ai, bi)
        new_fa = np.where(same, fai * 0.5, fbi)
        new_fa = np.where(same & use_mid, fai, new_fa)
        a[idx], fa[idx] = new_a, new_fa
        b[idx], fb[idx] = c, fc
    return b, fb, a, fa


def accept_roots(x, fx, other, f_other, res_tol, xtol):
    """Refined iterates that are genuine roots, as ``(x, f)`` pairs.

    A root is accepted when its residual is within ``res_tol``, or when its
    bracket has collapsed to ``xtol`` between two finite residuals of
    opposite sign: the residual is then continuous across the bracket and
    what remains is integration noise. Brackets closed against a floor
    sentinel are rejected.
    """
    x, fx = np.asarray(x), np.asarray(fx)
    width = np.abs(x - np.asarray(other))
    collapsed = ((width <= 10 * xtol * np.maximum(1.0, np.abs(x))) & np.isfinite(f_other)
                 & np.isfinite(fx) & (np.sign(fx) != np.sign(f_other)))
    ok = (np.abs(fx) <= res_tol) | collapsed
    return [(float(v), float(f)) for v, f, keep in zip(x, fx, ok) if keep]


def find_branches(problem: ShootingProblem) -> BranchSet:
    """All solutions with end voltage in ``[v_lo, v_hi]``, highest voltage first.

    The residual is sampled on ``n`` evenly spaced end voltages; each sign
    change is refined and screened by :func:`accept_roots`, which rejects
    brackets that straddle the voltage-floor boundary rather than a root.
    """
    params = problem.params
    grid = np.linspace(problem.v_lo, problem.v_hi, problem.n)
    res = shoot_residuals(grid, params, problem.tol, problem.v_floor)

    roots = [(float(v), 0.0) for v in grid[res == 0]]
    lo, hi = [], []
    for i in range(problem.n - 1):
        r0, r1 = res[i], res[i + 1]
        if np.isnan(r0) or np.isnan(r1) or r0 == 0 or r1 == 0:
            continue
        if (r0 < 0) != (r1 < 0):
            lo.append(i)
            hi.append(i + 1)
    if lo:
        lo, hi = np.array(lo), np.array(hi)
        fun = lambda v: shoot_residuals(v, params, problem.tol, problem.v_floor)
        refined = refine_brackets(fun, grid[lo], grid[hi], res[lo], res[hi], problem.xtol)
        roots += accept_roots(*refined, problem.res_tol, problem.xtol)

    roots.sort(reverse=True)
    distinct: list[tuple[float, float]] = []
    for v, f in roots:
        if not distinct or distinct[-1][0] - v > 1e3 * problem.xtol:
            distinct.append((v, f))
    profiles = []
    for k, (v, f) in enumerate(distinct):
        pr = profile_from_vend(v, params, problem.samples, problem.tol, problem.v_floor,
                               res_tol=10 * max(problem.res_tol, abs(f)))
        profiles.append(replace(pr, branch_id=k, stable=(k % 2 == 0)))
    return BranchSet(params.length, tuple(profiles))


def profile_from_vend(v_end: float, params: FeederParams, samples: int = 1001,
                      tol: float = DEFAULT_TOL, v_floor: float = DEFAULT_V_FLOOR,
                      res_tol: float = 1e-6) -> SolutionProfile:
    """Dense backward re-integration from a solved end voltage.

    Raises :class:`StaleRootError` if the head voltage misses 1 by more than
    ``res_tol``.
    """
    L = params.length
    if L == 0:
        if abs(v_end - 1.0) > res_tol:
            raise StaleRootError(f"empty feeder needs v_end = 1, got {v_end}")
        z = np.zeros(max(samples, 1))
        zeros = np.zeros_like(z)
        return SolutionProfile(z, zeros, zeros.copy(), np.full_like(z, v_end), v_end, 0.0, 0.0,
                               abs(v_end - 1.0), 0.0, 0.0, 0)
    traj = integrate(physical_field(params, aux=True), [0.0, 0.0, v_end, 0.0, 0.0], (L, 0.0),
                     tol, v_floor)
    head = traj.end
    residual = abs(head[2] - 1.0)
    if traj.reason is not Termination.REACHED_END or not residual <= res_tol:
        raise StaleRootError(
            f"v_end={v_end!r} gives head residual {residual:.3e} ({traj.reason.value})"
        )
    z = np.linspace(0.0, L, samples)
    ys = traj(z)
    ys[0] = head
    ys[-1] = [0.0, 0.0, v_end, 0.0, 0.0]
    P, Q, v = ys[:, 0].copy(), ys[:, 1].copy(), ys[:, 2].copy()
    return SolutionProfile(
        z=z, P=P, Q=Q, v=v, v_end=float(v_end), P0=float(head[0]), Q0=float(head[1]),
        residual=float(residual), loss=float(-head[3]), injected=float(-head[4]),
        reversals=_reversals(P, tol),
    )
