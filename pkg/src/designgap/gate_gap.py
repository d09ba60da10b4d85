"""Diagnostics for discrete gate sets: adjoints, convolutions and gap sweeps.

Nothing here decides universality.  The functions only produce numerical
evidence (gaps and spectral radii at small ``t``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import GuardrailError, check_dim, dagger, is_unitary, spectral_radius
from .moments import GateEnsemble, HaarEnsemble, haar_projector, moment_operator, spectral_gap

__all__ = [
    "GateSetDiagnostic",
    "RelationEntry",
    "adjoint_ensemble",
    "convolve",
    "gap_sweep",
    "phase_distance",
    "radius_relation_check",
]

DENSE_EIG_BUDGET = 1024
RELATION_ATOL = 1e-6
NOT_EVALUATED = "slow-decay and universality constants are non-constructive; not evaluated"


def adjoint_ensemble(e: GateEnsemble) -> GateEnsemble:
    return GateEnsemble([(p, dagger(u)) for p, u in e.members], strict=e.strict)


def convolve(e1: GateEnsemble, e2: GateEnsemble) -> GateEnsemble:
    """Draw from ``e2`` then from ``e1``: members ``U_i V_j`` with weight ``p_i r_j``."""
    if e1.dim != e2.dim:
        raise ValueError(f"dimension mismatch: {e1.dim} vs {e2.dim}")
    return GateEnsemble(
        [(p * r, u @ v) for p, u in e1.members for r, v in e2.members],
        strict=e1.strict and e2.strict,
    )


@dataclass(frozen=True)
class RelationEntry:
    t: int
    gap: float
    radius: float

    @property
    def residual(self) -> float:
        return abs(self.radius - (1.0 - self.gap) ** 2)


def radius_relation_check(e, t: int, budget: int = DENSE_EIG_BUDGET) -> RelationEntry:
    """Spectral radius of ``M_{e^H * e} - P`` next to ``(1 - gap)^2``.

    The radius comes from a full eigendecomposition of the convolved
    ensemble's moment operator; the gap from the norm of ``M_e - P``.
    """
    check_dim(e.dim ** (2 * t), budget, "eigensolver input")
    gap = spectral_gap(moment_operator(e, t)).gap
    if isinstance(e, HaarEnsemble):
        radius = 0.0
    else:
        m = moment_operator(convolve(adjoint_ensemble(e), e), t).matrix
        radius = spectral_radius(m - haar_projector(e.dim, t).matrix, budget)
    return RelationEntry(t, gap, radius)


@dataclass(frozen=True)
class GateSetDiagnostic:
    t_values: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    radii: list = field(default_factory=list)
    relation_residuals: list = field(default_factory=list)
    partial: bool = False
    notes: str = NOT_EVALUATED

    def __post_init__(self):
        lengths = {len(self.t_values), len(self.gaps), len(self.radii), len(self.relation_residuals)}
        if len(lengths) != 1:
            raise ValueError("diagnostic lists must have equal length")
        bad = [r for r in self.relation_residuals if r > RELATION_ATOL]
        if bad:
            raise ArithmeticError(f"radius relation violated by {max(bad):.3g}")

    @property
    def non_increasing(self) -> list[bool]:
        """Whether each gap is no larger than its predecessor (up to 1e-8)."""
        return [b <= a + 1e-8 for a, b in zip(self.gaps, self.gaps[1:])]

    def rows(self) -> list[dict]:
        return [
            {"t": t, "gap": g, "radius": r, "relation_residual": res}
            for t, g, r, res in zip(self.t_values, self.gaps, self.radii, self.relation_residuals)
        ]


def gap_sweep(e, t_max: int, budget: int = DENSE_EIG_BUDGET) -> GateSetDiagnostic:
    """Gaps and radius relations for ``t = 1 .. t_max``.

    Stops early with ``partial=True`` when the next order exceeds ``budget``.
    """
    entries = []
    partial = False
    for t in range(1, t_max + 1):
        try:
            entries.append(radius_relation_check(e, t, budget))
        except GuardrailError:
            partial = True
            break
    return GateSetDiagnostic(
        [x.t for x in entries],
        [x.gap for x in entries],
        [x.radius for x in entries],
        [x.residual for x in entries],
        partial,
    )


def phase_distance(v: np.ndarray, u: np.ndarray) -> float:
    """``min_phi ||V - e^{i phi} U||`` from the eigenphases of ``V U^H``.

    The eigenphases sit on the unit circle; the optimal phase is the centre of
    the shortest arc covering them, which is the complement of the widest gap
    between neighbouring phases.
    """
    v = np.asarray(v, dtype=np.complex128)
    u = np.asarray(u, dtype=np.complex128)
    if v.shape != u.shape:
        raise ValueError(f"shape mismatch: {v.shape} vs {u.shape}")
    if not (is_unitary(v, 1e-8) and is_unitary(u, 1e-8)):
        raise ValueError("phase distance needs unitary inputs")
    phases = np.sort(np.angle(np.linalg.eigvals(v @ dagger(u))))
    gaps = np.diff(np.append(phases, phases[0] + 2 * math.pi))
    arc = 2 * math.pi - float(gaps.max())
    return 2 * math.sin(max(arc, 0.0) / 4)
