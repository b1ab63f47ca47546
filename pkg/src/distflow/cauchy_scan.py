"""Nose curves and branch sets from a single rescaled Cauchy integration.

For constant injections the two-point problem collapses to an initial-value
problem in the rescaled variables, integrated from ``(rho, tau, upsilon) =
(0, 0, 1)`` at the feeder end. Every point ``s*`` of that one trajectory is a
complete solution for the feeder length ``L(s*) = s* / (upsilon(s*) sqrt(|p| r))``,
so scanning ``s*`` sweeps all lengths and all branches at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .analysis import StabilityFlags, _reversals, classify_stability
from .model import DomainError, FeederParams, RescaledParams, rescaled_params
from .ode_core import (DEFAULT_TOL, DEFAULT_V_FLOOR, Termination, Trajectory, integrate,
                       rescaled_field)
from .solution import BranchSet, SolutionProfile

SCAN_RESOLUTION = 2048


@dataclass(frozen=True)
class ScanTable:
    """Rescaled trajectory samples together with their physical images.

    ``v_min`` is the lowest physical voltage anywhere on the feeder that a
    sample represents; samples below ``v_floor`` are not offered as
    solutions.
    """

    s: np.ndarray
    rho: np.ndarray
    tau: np.ndarray
    upsilon: np.ndarray
    L: np.ndarray
    v_end: np.ndarray
    P0: np.ndarray
    Q0: np.ndarray
    v_min: np.ndarray
    rp: RescaledParams
    p: float
    r: float
    reason: Termination
    v_floor: float
    tol: float
    trajectory: Trajectory

    def __len__(self):
        return len(self.s)

    @property
    def length_scale(self) -> float:
        return 1.0 / math.sqrt(abs(self.p) * self.r)

    def length_at(self, s):
        u = self.trajectory(s)[..., 2]
        return np.asarray(s) / u * self.length_scale


@dataclass(frozen=True)
class CriticalLength:
    length: float
    s_star: float
    converged: bool


@dataclass(frozen=True)
class NoseCurve:
    """Continuation curve ``L(s*)`` with folds and per-segment stability.

    ``folds`` holds sample indices where ``dL/ds*`` changes sign and
    ``fold_s``/``fold_L`` their parabolically refined locations. ``segment``
    numbers the monotone pieces from the ``s* = 0`` end.
    """

    s: np.ndarray
    L: np.ndarray
    v_end: np.ndarray
    P0: np.ndarray
    Q0: np.ndarray
    folds: tuple[int, ...]
    fold_s: tuple[float, ...]
    fold_L: tuple[float, ...]
    segment: np.ndarray
    stability: StabilityFlags | None = None

    @property
    def stable(self) -> np.ndarray:
        """Per-point stability flag (``False`` where a segment is unflagged)."""
        flags = self.stability.stable if self.stability else ()
        return np.array([bool(flags[i]) if i < len(flags) and flags[i] is not None else False
                         for i in self.segment], dtype=bool)


def recompute_physical(sample, p: float, r: float) -> tuple[float, float, float, float]:
    """Map a rescaled sample ``(s*, rho, tau, upsilon)`` to ``(L, v_end, P0, Q0)``."""
    s, rho, tau, u = sample
    if not u > 0:
        raise DomainError(f"upsilon must be positive, got {u}")
    if p == 0 or not r > 0:
        raise DomainError("need p != 0 and r > 0")
    root = math.sqrt(abs(p) / r)
    return (s / (u * math.sqrt(abs(p) * r)), 1.0 / u, rho * root / u, tau * root / u)


def scan(
    rp: RescaledParams,
    s_max: float,
    tol: float = DEFAULT_TOL,
    v_floor: float = DEFAULT_V_FLOOR,
    *,
    p: float | None = None,
    r: float = 1.0,
) -> ScanTable:
    """Integrate the rescaled problem over ``0 <= s <= s_max``.

    ``p`` and ``r`` only set the physical map; ``p`` defaults to ``sign_p``.
    The integration stops early if ``upsilon`` reaches ``v_floor``; that
    crossing sample is dropped so every retained sample is above the floor.
    """
    if not s_max > 0:
        raise DomainError(f"s_max must be positive, got {s_max}")
    p = float(rp.sign_p if p is None else p)
    if p == 0 or math.copysign(1, p) != rp.sign_p:
        raise DomainError("p must be non-zero with the sign of rp.sign_p")
    traj = integrate(rescaled_field(rp, aux=True), [0.0, 0.0, 1.0, 0.0], (0.0, s_max), tol,
                     v_floor, max_step=s_max / SCAN_RESOLUTION)
    t, y = traj.t, traj.y
    if traj.reason is Termination.VOLTAGE_FLOOR:
        t, y = t[:-1], y[:-1]
    rho, tau, u = y[:, 0], y[:, 1], y[:, 2]
    sq = math.sqrt(abs(p) * r)
    root = math.sqrt(abs(p) / r)
    return ScanTable(
        s=t, rho=rho, tau=tau, upsilon=u,
        L=t / (u * sq), v_end=1.0 / u, P0=rho * root / u, Q0=tau * root / u,
        v_min=np.minimum.accumulate(u) / u,
        rp=rp, p=p, r=r, reason=traj.reason, v_floor=v_floor, tol=tol, trajectory=traj,
    )


def scan_feeder(params: FeederParams, s_max: float, tol: float = DEFAULT_TOL,
                v_floor: float = DEFAULT_V_FLOOR) -> ScanTable:
    """:func:`scan` with rescaled parameters and physical map taken from ``params``."""
    return scan(rescaled_params(params), s_max, tol, v_floor, p=params.p, r=params.r)


def _fold_indices(L: np.ndarray) -> list[int]:
    d = np.diff(L)
    nz = np.flatnonzero(d != 0)
    folds = []
    for a, b in zip(nz[:-1], nz[1:]):
        if np.sign(d[a]) != np.sign(d[b]):
            folds.append(int(b))  # L[b] is the extremum
    return folds


def _refine_extremum(table: ScanTable, i: int) -> tuple[float, float]:
    """Vertex of parabolas through ``L(s)`` around sample ``i``, shrinking the stencil."""
    s = table.s
    if i <= 0 or i >= len(s) - 1:
        return float(s[i]), float(table.L[i])
    centre = float(s[i])
    half = 0.5 * (s[i + 1] - s[i - 1])
    lo_lim, hi_lim = float(s[i - 1]), float(s[i + 1])
    for _ in range(6):
        xs = np.array([centre - half, centre, centre + half])
        xs = np.clip(xs, lo_lim, hi_lim)
        if not (xs[0] < xs[1] < xs[2]):
            break
        ys = table.length_at(xs)
        a, b, _ = np.polyfit(xs - centre, ys, 2)
        if a == 0:
            break
        new = centre - b / (2 * a)
        if not (lo_lim <= new <= hi_lim):
            break
        centre = new
        half *= 0.1
        if half < 1e-7 * max(1.0, abs(centre)):
            break
    return centre, float(table.length_at(centre))


def critical_length(table: ScanTable) -> CriticalLength:
    """Longest feeder supported by the scan, refined around the discrete maximum.

    If the maximum sits on the last sample the scan ended before the fold;
    the value is then only a lower bound and ``converged`` is ``False``.
    """
    if len(table) == 0:
        raise DomainError("empty scan table")
    i = int(np.argmax(table.L))
    if i == len(table) - 1:
        return CriticalLength(float(table.L[i]), float(table.s[i]), False)
    s_star, L_max = _refine_extremum(table, i)
    return CriticalLength(max(L_max, float(table.L[i])), s_star, True)


def nose_curve(table: ScanTable) -> NoseCurve:
    """Split ``L(s*)`` at its folds and attach the stability proxy."""
    if len(table) == 0:
        raise DomainError("empty scan table")
    folds = _fold_indices(table.L)
    segment = np.zeros(len(table), dtype=int)
    for f in folds:
        segment[f + 1:] += 1
    refined = [_refine_extremum(table, f) for f in folds]
    curve = NoseCurve(
        s=table.s, L=table.L, v_end=table.v_end, P0=table.P0, Q0=table.Q0,
        folds=tuple(folds), fold_s=tuple(a for a, _ in refined),
        fold_L=tuple(b for _, b in refined), segment=segment,
    )
    return replace(curve, stability=classify_stability(curve))


def _bisect_length(table: ScanTable, lo: float, hi: float, target: float) -> float:
    f_lo = float(table.length_at(lo)) - target
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        f_mid = float(table.length_at(mid)) - target
        if f_mid == 0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def profile_at(table: ScanTable, s_star: float, samples: int = 1001,
               branch_id: int = 0, stable: bool | None = None) -> SolutionProfile:
    """Physical profile of the feeder whose scan coordinate is ``s_star``."""
    state = table.trajectory(s_star)
    u_star = float(state[2])
    L, v_end, P0, Q0 = recompute_physical((s_star, state[0], state[1], u_star), table.p, table.r)
    z = np.linspace(0.0, L, samples)
    s = np.clip(math.sqrt(abs(table.p) * table.r) * u_star * (L - z), 0.0, s_star)
    ys = table.trajectory(s)
    root = math.sqrt(abs(table.p) / table.r)
    P = ys[:, 0] * root / u_star
    Q = ys[:, 1] * root / u_star
    v = ys[:, 2] / u_star
    P[-1] = Q[-1] = 0.0
    loss = root * v_end * float(state[3])
    return SolutionProfile(
        z=z, P=P, Q=Q, v=v, v_end=v_end, P0=P0, Q0=Q0, residual=abs(v[0] - 1.0),
        loss=loss, injected=table.p * L, reversals=_reversals(P, table.tol),
        branch_id=branch_id, stable=stable,
    )


def solutions_at_length(table: ScanTable, L_target: float, params: FeederParams | None = None,
                        samples: int = 1001) -> BranchSet:
    """Every scanned solution whose length equals ``L_target``.

    Roots of ``L(s*) - L_target`` are bracketed between consecutive samples
    and refined by bisection on the dense output. Solutions whose lowest
    feeder voltage is under the table's ``v_floor`` are dropped. An empty
    result means ``L_target`` is beyond the critical length (or the scan
    horizon); the critical length is attached either way.
    """
    if not L_target > 0:
        raise DomainError(f"target length must be positive, got {L_target}")
    if params is not None and (params.p != table.p or params.r != table.r):
        raise DomainError("params do not match the physical map of the scan table")
    crit = critical_length(table).length if len(table) else None
    curve = nose_curve(table)
    flags = curve.stability.stable if curve.stability else ()
    g = table.L - L_target
    roots = []
    for i in range(len(g) - 1):
        if g[i] == 0:
            roots.append(float(table.s[i]))
        elif g[i + 1] != 0 and (g[i] < 0) != (g[i + 1] < 0):
            roots.append(_bisect_length(table, float(table.s[i]), float(table.s[i + 1]), L_target))
    if len(g) and g[-1] == 0:
        roots.append(float(table.s[-1]))

    profiles: list[SolutionProfile] = []
    for s_star in roots:
        k = min(int(np.searchsorted(table.s, s_star)), len(table) - 1)
        seg = int(curve.segment[k])
        u_star = float(table.trajectory(s_star)[2])
        u_low = min(float(np.min(table.upsilon[:k])) if k else u_star, u_star)
        if u_low / u_star < table.v_floor:
            continue
        stable = flags[seg] if seg < len(flags) else None
        prof = profile_at(table, s_star, samples, seg, stable)
        if any(abs(prof.v_end - other.v_end) <= 1e3 * table.tol for other in profiles):
            continue
        profiles.append(prof)
    return BranchSet(L_target, tuple(profiles), crit)
