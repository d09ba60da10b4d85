"""Gate ensembles, t-th moment operators, Haar projectors and spectral gaps."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence, Union

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .checks import BoundCheck
from .linalg import (
    ConvergenceError,
    check_dim,
    dagger,
    gram_lanczos,
    gram_power_iteration,
    haar_sample,
    identity_operator,
    to_dense,
)

__all__ = [
    "GapReport",
    "GateEnsemble",
    "HaarEnsemble",
    "HaarProjector",
    "MomentOperator",
    "ResidualOrthogonalityError",
    "convolution_bound_check",
    "cycle_count",
    "haar_projector",
    "moment_operator",
    "orthogonality_defect",
    "permutation_gram",
    "permutation_state",
    "replica_power",
    "residual",
    "residual_norm",
    "spectral_gap",
]

PROB_ATOL = 1e-12
UNITARY_ATOL = 1e-10
ORTHO_ATOL = 1e-9
SVD_FALLBACK_DIM = 1024
MAX_PERMUTATION_ORDER = 6


class ResidualOrthogonalityError(ArithmeticError):
    """``M - P`` is not orthogonal to the Haar projector.

    This happens only when an ensemble member is not unitary.
    """


@dataclass(frozen=True, eq=False)
class GateEnsemble:
    """Finite probability-weighted set of ``q x q`` unitaries.

    Ensembles compare and hash by identity so derived moments can be cached.
    ``strict=False`` skips the unitarity check, which is only useful for
    exercising the failure path of :func:`residual`.
    """

    members: tuple
    strict: bool = field(default=True, compare=False)

    def __init__(self, members, strict: bool = True):
        pairs = []
        for p, u in members:
            u = np.array(u, dtype=np.complex128)
            u.setflags(write=False)
            pairs.append((float(p), u))
        object.__setattr__(self, "members", tuple(pairs))
        object.__setattr__(self, "strict", strict)
        self._validate()

    def _validate(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        q = self.members[0][1].shape[0]
        for p, u in self.members:
            if u.shape != (q, q):
                raise ValueError(f"member of shape {u.shape} in a dimension-{q} ensemble")
            if not np.all(np.isfinite(u)):
                raise ValueError("member has non-finite entries")
            if p < 0 or not math.isfinite(p):
                raise ValueError(f"invalid probability {p}")
            if self.strict:
                err = np.linalg.norm(dagger(u) @ u - np.eye(q), 2)
                if err > UNITARY_ATOL:
                    raise ValueError(f"member is not unitary (||U^H U - I|| = {err:.3g})")
        total = sum(p for p, _ in self.members)
        if abs(total - 1.0) > PROB_ATOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def uniform(cls, unitaries: Sequence[np.ndarray], strict: bool = True) -> GateEnsemble:
        n = len(unitaries)
        return cls([(1.0 / n, u) for u in unitaries], strict=strict)

    @classmethod
    def singleton(cls, u: np.ndarray) -> GateEnsemble:
        return cls([(1.0, u)])

    @property
    def dim(self) -> int:
        return self.members[0][1].shape[0]

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.members])

    @property
    def unitaries(self) -> list[np.ndarray]:
        return [u for _, u in self.members]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.members), p=self.probabilities)
        return self.members[idx][1]

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class HaarEnsemble:
    """The Haar measure on ``U(dim)``; its moment operator is the Haar projector."""

    dim: int

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return haar_sample(self.dim, rng)


Ensemble = Union[GateEnsemble, HaarEnsemble]


@dataclass(frozen=True)
class MomentOperator:
    """``E[U^{(x)t} (x) conj(U)^{(x)t}]`` on a ``q``-dimensional system.

    ``data`` is a dense array or, for spaces too large to store, a
    :class:`~scipy.sparse.linalg.LinearOperator`.
    """

    q: int
    t: int
    data: object

    def __post_init__(self):
        n = self.q ** (2 * self.t)
        if tuple(self.data.shape) != (n, n):
            raise ValueError(f"moment operator data has shape {self.data.shape}, expected {(n, n)}")

    @property
    def dim(self) -> int:
        return self.q ** (2 * self.t)

    @property
    def is_dense(self) -> bool:
        return isinstance(self.data, np.ndarray)

    @property
    def matrix(self) -> np.ndarray:
        return to_dense(self.data)

    def as_operator(self) -> LinearOperator:
        return aslinearoperator(self.data)

    def __matmul__(self, other: MomentOperator) -> MomentOperator:
        """Moment operator of the convolution "``other`` first, then ``self``"."""
        _match(self, other)
        if self.is_dense and other.is_dense:
            return MomentOperator(self.q, self.t, self.data @ other.data)
        return MomentOperator(self.q, self.t, self.as_operator() @ other.as_operator())

    def power(self, n: int) -> MomentOperator:
        if n < 0:
            raise ValueError("negative power")
        if self.is_dense:
            return MomentOperator(self.q, self.t, np.linalg.matrix_power(self.data, n))
        out = identity_operator(self.dim)
        for _ in range(n):
            out = self.as_operator() @ out
        return MomentOperator(self.q, self.t, out)


def _match(a, b):
    if (a.q, a.t) != (b.q, b.t):
        raise ValueError(f"mismatched (q, t): {(a.q, a.t)} vs {(b.q, b.t)}")


def replica_power(u: np.ndarray, t: int) -> np.ndarray:
    """``U^{(x)t} (x) conj(U)^{(x)t}`` in the replica-major convention."""
    u = np.asarray(u, dtype=np.complex128)
    check_dim(u.shape[0] ** (2 * t), None, "replica power")
    fwd = np.ones((1, 1), dtype=np.complex128)
    for _ in range(t):
        fwd = np.kron(fwd, u)
    return np.kron(fwd, fwd.conj())


def moment_operator(e: Ensemble, t: int) -> MomentOperator:
    """Dense ``t``-th moment operator of a gate ensemble."""
    if t < 1:
        raise ValueError(f"moment order must be >= 1, got {t}")
    q = e.dim
    check_dim(q ** (2 * t), None, "moment operator")
    if isinstance(e, HaarEnsemble):
        return MomentOperator(q, t, haar_projector(q, t).matrix)
    acc = np.zeros((q ** (2 * t),) * 2, dtype=np.complex128)
    for p, u in e.members:
        if p:
            acc += p * replica_power(u, t)
    return MomentOperator(q, t, acc)


# -- permutation states ------------------------------------------------------


def cycle_count(perm: Sequence[int]) -> int:
    seen = [False] * len(perm)
    cycles = 0
    for start in range(len(perm)):
        if seen[start]:
            continue
        cycles += 1
        k = start
        while not seen[k]:
            seen[k] = True
            k = perm[k]
    return cycles


def permutation_state(q: int, t: int, perm: Sequence[int]) -> np.ndarray:
    """Normalized ``q^{-t/2} sum_i |i_1..i_t>|i_perm(1)..i_perm(t)>``."""
    if sorted(perm) != list(range(t)):
        raise ValueError(f"{perm} is not a permutation of 0..{t - 1}")
    check_dim(q ** (2 * t), None, "permutation state")
    digits = np.indices((q,) * t).reshape(t, -1)
    weights = q ** np.arange(t - 1, -1, -1)
    first = weights @ digits
    second = weights @ digits[list(perm)]
    vec = np.zeros(q ** (2 * t), dtype=np.complex128)
    vec[first * q**t + second] = q ** (-t / 2)
    return vec


def permutation_gram(q: int, t: int) -> np.ndarray:
    """Closed-form overlaps ``<sigma|tau> = q^{cycles(sigma^-1 tau) - t}``."""
    perms = list(itertools.permutations(range(t)))
    gram = np.empty((len(perms), len(perms)))
    for a, s in enumerate(perms):
        inv = np.argsort(s)
        for b, tau in enumerate(perms):
            gram[a, b] = float(q) ** (cycle_count([inv[x] for x in tau]) - t)
    return gram


@dataclass(frozen=True)
class HaarProjector:
    """Orthogonal projector onto the span of the permutation states.

    Stored in factored form ``P = B B^H`` with ``B`` an isometry of shape
    ``(q^{2t}, rank)``.
    """

    q: int
    t: int
    basis: np.ndarray = field(repr=False)

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @cached_property
    def matrix(self) -> np.ndarray:
        check_dim(self.dim, None, "Haar projector")
        return self.basis @ dagger(self.basis)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.basis @ (dagger(self.basis) @ x)

    def as_operator(self) -> LinearOperator:
        return LinearOperator(
            (self.dim, self.dim),
            matvec=self.apply,
            rmatvec=self.apply,
            matmat=self.apply,
            rmatmat=self.apply,
            dtype=np.complex128,
        )

    def as_moment(self) -> MomentOperator:
        return MomentOperator(self.q, self.t, self.matrix)


@lru_cache(maxsize=64)
def haar_projector(q: int, t: int) -> HaarProjector:
    """Haar projector of order ``t`` on ``C^q``, built from the permutation states.

    The states are linearly dependent when ``q < t``, so the span is taken from
    a column-pivoted QR with rank cut ``1e-10`` times the largest pivot.
    """
    if q < 1 or t < 1:
        raise ValueError("q and t must be positive")
    if t > MAX_PERMUTATION_ORDER:
        raise ValueError(f"t={t} exceeds the supported order {MAX_PERMUTATION_ORDER}")
    check_dim(q ** (2 * t), None, "Haar projector")
    states = np.column_stack(
        [permutation_state(q, t, p) for p in itertools.permutations(range(t))]
    )
    qmat, r, _ = scipy.linalg.qr(states, mode="economic", pivoting=True)
    diag = np.abs(np.diagonal(r))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    if rank == 0:
        raise RuntimeError("permutation states span a zero space")
    basis = np.ascontiguousarray(qmat[:, :rank])
    basis.setflags(write=False)
    return HaarProjector(q, t, basis)


# -- residuals and gaps ------------------------------------------------------


def orthogonality_defect(m: MomentOperator, p: HaarProjector) -> tuple[float, float]:
    """``(||P R||, ||R P||)`` for ``R = M - P``, using ``P = B B^H``.

    ``||P R|| = ||B^H M - B^H||`` and ``||R P|| = ||M B - B||`` so only
    ``rank`` operator applications are needed.
    """
    _match(m, p)
    b = p.basis
    if m.is_dense:
        left = dagger(b) @ m.data - dagger(b)
        right = m.data @ b - b
    else:
        op = m.as_operator()
        left = dagger(op.rmatmat(b)) - dagger(b)
        right = op.matmat(b) - b
    return float(np.linalg.norm(left, 2)), float(np.linalg.norm(right, 2))


def _check_orthogonal(m, p, atol=ORTHO_ATOL):
    pr, rp = orthogonality_defect(m, p)
    if pr > atol or rp > atol:
        raise ResidualOrthogonalityError(
            f"residual not orthogonal to the Haar projector (||PR||={pr:.3g}, "
            f"||RP||={rp:.3g}); is every ensemble member unitary?"
        )


def residual(m: MomentOperator, p: HaarProjector):
    """``R = M - P``, after certifying ``P R = R P = 0``.

    Dense input gives a dense array, implicit input a ``LinearOperator``.
    """
    _check_orthogonal(m, p)
    if m.is_dense:
        return m.data - p.matrix
    return m.as_operator() - p.as_operator()


def residual_norm(
    r,
    tol: float = 1e-10,
    max_iters: int = 10_000,
    seed: int = 0,
    method: str = "auto",
) -> tuple[float, int, str]:
    """Operator norm of a residual: ``(norm, iterations, method_used)``.

    ``method='auto'`` runs Gram power iteration on operators of dimension at
    most 1024, falling back to a dense SVD if it does not converge.  Larger
    operators go to Lanczos on the same Gram operator, since their clustered
    spectra make plain power iteration needlessly slow.
    """
    if method == "svd":
        return float(np.linalg.norm(to_dense(r), 2)), 0, "svd"
    if method == "lanczos" or (method == "auto" and r.shape[0] > SVD_FALLBACK_DIM):
        value, iters = gram_lanczos(r, tol, max_iters, seed)
        return value, iters, "lanczos"
    if method not in ("auto", "power"):
        raise ValueError(f"unknown method {method!r}")
    try:
        value, iters = gram_power_iteration(r, tol, max_iters, seed, 4)
        return value, iters, "power"
    except ConvergenceError:
        if method == "power":
            raise
        return float(np.linalg.norm(to_dense(r), 2)), max_iters, "svd"


@dataclass(frozen=True)
class GapReport:
    gap: float
    residual_norm: float
    iterations: int
    tolerance: float
    method: str = "power"

    def __post_init__(self):
        if not -1e-8 <= self.gap <= 1 + 1e-8:
            raise ValueError(f"gap {self.gap} outside [0, 1]")

    def as_row(self) -> dict:
        return {
            "gap": self.gap,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "tolerance": self.tolerance,
            "method": self.method,
        }


def spectral_gap(
    m: MomentOperator,
    p: HaarProjector | None = None,
    tol: float = 1e-10,
    max_iters: int = 10_000,
    method: str = "auto",
) -> GapReport:
    """``1 - ||M - P||`` with iteration diagnostics."""
    p = haar_projector(m.q, m.t) if p is None else p
    r = residual(m, p)
    norm, iters, used = residual_norm(r, tol=tol, max_iters=max_iters, method=method)
    return GapReport(1.0 - norm, norm, iters, tol, used)


def convolution_bound_check(
    layers: Sequence[GapReport],
    composite: MomentOperator,
    p: HaarProjector | None = None,
) -> BoundCheck:
    """``||M_L ... M_1 - P|| <= exp(-sum of layer gaps)``."""
    p = haar_projector(composite.q, composite.t) if p is None else p
    _match(composite, p)
    total = sum(rep.gap for rep in layers)
    norm, _, _ = residual_norm(residual(composite, p))
    return BoundCheck(
        "convolution",
        lhs=math.exp(-total),
        rhs=norm,
        details={"layers": len(layers), "gap_sum": total},
    )
