"""Diagnostics on solved feeders: stability proxy, flow reversals, losses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .model import DomainError, FeederParams
from .ode_core import DEFAULT_TOL
from .solution import BranchSet, SolutionProfile

FIELDS = ("P", "Q", "v")


@dataclass(frozen=True)
class StabilityFlags:
    """Per-segment stability proxy of a nose curve.

    ``stable[i]`` is ``None`` for degenerate (single point) segments.
    ``dv_dP0[i]`` is the median slope ``d v_end / d P0`` along segment ``i``,
    kept raw so either sign convention can be applied downstream.
    """

    stable: tuple[bool | None, ...]
    dv_dP0: tuple[float, ...]


def classify_stability(curve) -> StabilityFlags:
    """Flag nose-curve segments as stable or unstable.

    The segment starting at zero length (highest end voltage) is stable and
    every fold swaps stability, so flags alternate along the curve. ``curve``
    needs ``segment``, ``v_end`` and ``P0`` arrays (a :class:`NoseCurve`).
    """
    segment = np.asarray(curve.segment)
    if segment.size == 0:
        raise DomainError("nose curve has no points")
    stable, slopes = [], []
    for sid in range(int(segment.max()) + 1):
        members = np.flatnonzero(segment == sid)
        if members.size < 2:
            stable.append(None)
            slopes.append(math.nan)
            continue
        # include the fold point closing the previous segment so slopes span the whole arc
        lo = max(members[0] - 1, 0) if sid else members[0]
        sl = slice(lo, members[-1] + 1)
        dv = np.diff(np.asarray(curve.v_end)[sl])
        dP = np.diff(np.asarray(curve.P0)[sl])
        ok = dP != 0
        slopes.append(float(np.median(dv[ok] / dP[ok])) if ok.any() else math.nan)
        stable.append(sid % 2 == 0)
    return StabilityFlags(tuple(stable), tuple(slopes))


def count_flow_reversals(profile: SolutionProfile, tol: float = DEFAULT_TOL) -> int:
    """Sign changes of the real flow ``P(z)`` over interior samples.

    Samples with ``|P|`` below ``10 * tol * max|P|`` are ignored so the
    vanishing tail near ``P(L) = 0`` does not count as a reversal.
    """
    return _reversals(np.asarray(profile.P), tol)


def _reversals(P: np.ndarray, tol: float = DEFAULT_TOL) -> int:
    if P.size < 3:
        return 0
    interior = P[1:-1]
    peak = np.max(np.abs(P))
    if peak == 0:
        return 0
    signs = np.sign(interior[np.abs(interior) > 10 * tol * peak])
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def losses_and_utilization(profile: SolutionProfile, params: FeederParams) -> tuple[float, float]:
    """Feeder losses and power utilization of one solution.

    Loss is Simpson quadrature of ``r (P^2 + Q^2) / v^2`` over the samples.
    Utilization is ``P(0) / (-p L)`` for consumption and ``|P(0)| / (p L)``
    for generation; it is ``NaN`` when ``p == 0`` or the feeder is empty.
    """
    z, P, Q, v = (np.asarray(a) for a in (profile.z, profile.P, profile.Q, profile.v))
    if z.size < 2 or z[-1] == z[0]:
        loss = 0.0
    else:
        loss = float(simpson(params.r * (P * P + Q * Q) / (v * v), x=z))
    L = profile.length
    if params.p == 0 or L == 0:
        return loss, math.nan
    if params.p < 0:
        return loss, profile.P0 / (-params.p * L)
    return loss, abs(profile.P0) / (params.p * L)


def compare_profiles(a: SolutionProfile, b: SolutionProfile) -> dict[str, tuple[float, float]]:
    """Sup-norm and L2-norm of ``a - b`` per field on ``a``'s grid within the overlap."""
    lo, hi = max(a.z[0], b.z[0]), min(a.z[-1], b.z[-1])
    if lo > hi:
        raise DomainError("profiles cover disjoint z ranges")
    za = np.asarray(a.z)
    mask = (za >= lo) & (za <= hi)
    z = za[mask]
    out = {}
    for name in FIELDS:
        fa = np.asarray(getattr(a, name))[mask]
        fb = np.interp(z, b.z, getattr(b, name))
        d = fa - fb
        sup = float(np.max(np.abs(d))) if d.size else 0.0
        l2 = float(np.sqrt(simpson(d * d, x=z))) if z.size > 1 and hi > lo else 0.0
        out[name] = (sup, l2)
    return out


@dataclass(frozen=True)
class BranchSummary:
    branch_id: int
    v_end: float
    P0: float
    Q0: float
    loss: float
    utilization: float
    reversals: int
    stable: bool | None


@dataclass(frozen=True)
class FeederReport:
    length: float
    critical_length: float | None
    branches: tuple[BranchSummary, ...]

    @property
    def branch_count(self) -> int:
        return len(self.branches)


def feeder_report(branches: BranchSet, params: FeederParams) -> FeederReport:
    rows = []
    for pr in branches:
        _, util = losses_and_utilization(pr, params)
        rows.append(BranchSummary(pr.branch_id, pr.v_end, pr.P0, pr.Q0, pr.loss, util,
                                  pr.reversals, pr.stable))
    return FeederReport(branches.length, branches.critical_length, tuple(rows))
