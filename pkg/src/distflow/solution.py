"""Solved feeder profiles and sets of coexisting solutions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SolutionProfile:
    """One solution of the two-point problem, sampled on a uniform ``z`` grid.

    ``loss`` and ``injected`` are the integrals of ``r S`` and of the real
    injection density over the feeder, carried along by the integrator rather
    than recovered from the samples.
    """

    z: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    v_end: float
    P0: float
    Q0: float
    residual: float
    loss: float
    injected: float
    reversals: int
    branch_id: int = 0
    stable: bool | None = None

    @property
    def length(self) -> float:
        return float(self.z[-1])

    @property
    def min_voltage(self) -> float:
        return float(np.min(self.v))


@dataclass(frozen=True)
class BranchSet:
    """All solutions found at one feeder length.

    ``critical_length`` is attached when the solver knows it (the rescaled
    scan does); shooting leaves it ``None``.
    """

    length: float
    profiles: tuple[SolutionProfile, ...] = field(default_factory=tuple)
    critical_length: float | None = None

    def __len__(self):
        return len(self.profiles)

    def __iter__(self):
        return iter(self.profiles)

    def __getitem__(self, i) -> SolutionProfile:
        return self.profiles[i]

    @property
    def v_ends(self) -> np.ndarray:
        return np.array([pr.v_end for pr in self.profiles])

    def by_voltage(self) -> list[SolutionProfile]:
        """Profiles sorted from the highest end voltage down."""
        return sorted(self.profiles, key=lambda pr: -pr.v_end)
