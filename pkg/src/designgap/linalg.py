"""Dense complex linear algebra underlying the moment-operator engine.

Replica index convention
------------------------
An operator acting on ``N`` qudits of local dimension ``d`` replicated ``2t``
times lives on ``(C^d)^{(x) 2tN}``.  The flattened index is replica-major and
site-major inside each replica: replicas ``0..t-1`` carry ``U`` and replicas
``t..2t-1`` carry ``U*``.  With this ordering ``U^{(x)t,t}`` is the plain
Kronecker product ``U (x) ... (x) U (x) U* (x) ... (x) U*``.

Operators that are too large to hold densely can be handled implicitly through
:func:`local_operator`, which applies a local operator to blocks of vectors by
tensor contraction.  :func:`op_norm` accepts both dense arrays and
:class:`scipy.sparse.linalg.LinearOperator` instances.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

__all__ = [
    "ConvergenceError",
    "GuardrailError",
    "SiteEmbedding",
    "apply_axes",
    "apply_local",
    "dagger",
    "dense_max_dim",
    "embed_local",
    "gram_lanczos",
    "gram_power_iteration",
    "haar_sample",
    "identity_operator",
    "is_unitary",
    "kron",
    "local_operator",
    "max_dim",
    "numerical_rank",
    "op_norm",
    "spectral_radius",
    "to_dense",
]

DEFAULT_MAX_DIM = 2**16
DEFAULT_DENSE_MAX_DIM = 4096
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 10_000


class GuardrailError(ValueError):
    """An operator dimension exceeded the configured budget."""


class ConvergenceError(RuntimeError):
    """Power iteration did not converge; carries the last iterate."""

    def __init__(self, message, value, vector, iterations):
        super().__init__(message)
        self.value = value
        self.vector = vector
        self.iterations = iterations


def max_dim() -> int:
    """Operator-dimension guardrail, overridable with ``DESIGNGAP_MAX_DIM``."""
    raw = os.environ.get("DESIGNGAP_MAX_DIM")
    if raw is None:
        return DEFAULT_MAX_DIM
    value = int(raw)
    if value < 1:
        raise GuardrailError(f"DESIGNGAP_MAX_DIM must be positive, got {raw!r}")
    return value


def dense_max_dim() -> int:
    # dense n x n complex storage is 16 n^2 bytes; 4096 -> 268 MB
    return min(DEFAULT_DENSE_MAX_DIM, max_dim())


def check_dim(dim: int, limit: int | None = None, what: str = "operator") -> None:
    limit = max_dim() if limit is None else limit
    if dim > limit:
        raise GuardrailError(f"{what} dimension {dim} exceeds guardrail {limit}")


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def kron(a: np.ndarray, b: np.ndarray, max_dim: int | None = None) -> np.ndarray:
    """Kronecker product with an overflow guardrail on the result's row count."""
    a = np.asarray(a)
    b = np.asarray(b)
    check_dim(a.shape[0] * b.shape[0], max_dim, "kron result")
    check_dim(a.shape[1] * b.shape[1], max_dim, "kron result")
    return np.kron(a, b)


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return bool(np.linalg.norm(dagger(u) @ u - np.eye(u.shape[0]), 2) <= atol)


@dataclass(frozen=True)
class SiteEmbedding:
    """Placement of a local replica operator inside the N-site replica space."""

    n_sites: int
    local_dim: int
    t: int
    target_sites: tuple[int, ...]

    def __post_init__(self):
        sites = tuple(int(s) for s in self.target_sites)
        object.__setattr__(self, "target_sites", sites)
        if self.n_sites < 1 or self.local_dim < 1 or self.t < 1:
            raise ValueError("n_sites, local_dim and t must be positive")
        if len(set(sites)) != len(sites):
            raise ValueError(f"duplicate target sites in {sites}")
        if any(s < 0 or s >= self.n_sites for s in sites):
            raise ValueError(f"target sites {sites} outside 0..{self.n_sites - 1}")

    @property
    def dim(self) -> int:
        return self.local_dim ** (2 * self.t * self.n_sites)

    @property
    def local_op_dim(self) -> int:
        return self.local_dim ** (2 * self.t * len(self.target_sites))

    def target_axes(self) -> list[int]:
        n = self.n_sites
        return [r * n + s for r in range(2 * self.t) for s in self.target_sites]

    def rest_axes(self) -> list[int]:
        n = self.n_sites
        targets = set(self.target_sites)
        return [r * n + s for r in range(2 * self.t) for s in range(n) if s not in targets]


def embed_local(op: np.ndarray, emb: SiteEmbedding, max_dim: int | None = None) -> np.ndarray:
    """Dense embedding of ``op`` on ``emb.target_sites`` with identity elsewhere.

    ``op`` uses the local replica ordering: ``2t`` replica factors, each over
    the target sites in the order given by ``emb.target_sites``.
    """
    op = np.asarray(op)
    if op.shape != (emb.local_op_dim, emb.local_op_dim):
        raise ValueError(
            f"local operator has shape {op.shape}, expected "
            f"{(emb.local_op_dim, emb.local_op_dim)} for {len(emb.target_sites)} sites"
        )
    check_dim(emb.dim, max_dim, "embedded operator")
    rest = emb.dim // emb.local_op_dim
    full = np.kron(op, np.eye(rest, dtype=op.dtype))
    source = emb.target_axes() + emb.rest_axes()
    n_ax = len(source)
    if source == list(range(n_ax)):
        return full
    inverse = np.argsort(source)
    perm = list(inverse) + [n_ax + i for i in inverse]
    d = emb.local_dim
    out = full.reshape((d,) * (2 * n_ax)).transpose(perm)
    return np.ascontiguousarray(out).reshape(emb.dim, emb.dim)


def apply_axes(op, vecs: np.ndarray, axes, n_axes: int, d: int) -> np.ndarray:
    """Apply ``op`` to tensor legs ``axes`` of each column of ``vecs``.

    Each column of ``vecs`` is viewed as a tensor with ``n_axes`` legs of
    dimension ``d``; ``op`` acts on the legs in ``axes`` (in that order).
    ``op`` is a square array or a callable on ``(d**len(axes), k)`` arrays.
    """
    squeeze = vecs.ndim == 1
    total = d**n_axes
    block = vecs.reshape(total, -1)
    b = block.shape[1]
    k = len(axes)
    tensor = block.reshape((d,) * n_axes + (b,))
    front = np.moveaxis(tensor, axes, range(k)).reshape(d**k, -1)
    front = op(front) if callable(op) else op @ front
    out = np.moveaxis(front.reshape((d,) * n_axes + (b,)), range(k), axes)
    out = out.reshape(total, b)
    return out[:, 0] if squeeze else out


def apply_local(op, vecs: np.ndarray, emb: SiteEmbedding) -> np.ndarray:
    """Apply the embedding of ``op`` to the columns of ``vecs`` without forming it."""
    return apply_axes(op, vecs, emb.target_axes(), 2 * emb.t * emb.n_sites, emb.local_dim)


def local_operator(op: np.ndarray, emb: SiteEmbedding) -> LinearOperator:
    """Implicit counterpart of :func:`embed_local`."""
    op = np.asarray(op)
    if op.shape != (emb.local_op_dim, emb.local_op_dim):
        raise ValueError(f"local operator has shape {op.shape}, expected {emb.local_op_dim}")
    check_dim(emb.dim, None, "embedded operator")
    op_h = dagger(op)
    return LinearOperator(
        (emb.dim, emb.dim),
        matvec=lambda v: apply_local(op, v, emb),
        rmatvec=lambda v: apply_local(op_h, v, emb),
        matmat=lambda v: apply_local(op, v, emb),
        rmatmat=lambda v: apply_local(op_h, v, emb),
        dtype=np.complex128,
    )


def identity_operator(n: int) -> LinearOperator:
    same = lambda v: v  # noqa: E731
    return LinearOperator((n, n), matvec=same, rmatvec=same, matmat=same, rmatmat=same,
                          dtype=np.complex128)


def _matmat(a, x):
    return a @ x if isinstance(a, np.ndarray) else a.matmat(x)


def _rmatmat(a, x):
    return dagger(a) @ x if isinstance(a, np.ndarray) else a.rmatmat(x)


def to_dense(a) -> np.ndarray:
    if isinstance(a, np.ndarray):
        return a
    check_dim(a.shape[0], dense_max_dim(), "dense materialization")
    return a.matmat(np.eye(a.shape[1], dtype=np.complex128))


def op_norm(
    a,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    block: int = 4,
) -> float:
    """Largest singular value by block power iteration on the Gram operator ``a a^H``.

    Each step applies ``a a^H`` to an orthonormal block, takes the Rayleigh-Ritz
    estimate of the top eigenvalue and stops once its residual falls below
    ``tol`` relative to the eigenvalue (with an absolute floor ``tol**2`` so that
    a vanishing operator converges).  ``block=1`` is plain power iteration.

    Raises:
        ConvergenceError: after ``max_iters`` steps, with the last estimate.
    """
    value, _ = gram_power_iteration(a, tol, max_iters, seed, block)
    return value


def gram_power_iteration(a, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, seed=0, block=4):
    """Top singular value of ``a`` and the number of iterations it took."""
    rows, cols = a.shape
    if rows != cols:
        raise ValueError(f"op_norm expects a square operator, got {a.shape}")
    n = rows
    if n == 0:
        return 0.0, 0
    b = max(1, min(block, n))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, b)) + 1j * rng.standard_normal((n, b))
    x, _ = np.linalg.qr(x)
    lam = 0.0
    top_vec = x[:, 0]
    floor = tol * tol
    for it in range(1, max_iters + 1):
        y = _matmat(a, _rmatmat(a, x))
        ritz = dagger(x) @ y
        ritz = 0.5 * (ritz + dagger(ritz))
        w, v = np.linalg.eigh(ritz)
        lam = max(float(w[-1]), 0.0)
        top_vec = x @ v[:, -1]
        res = np.linalg.norm(y @ v[:, -1] - w[-1] * top_vec)
        if res <= tol * lam + floor:
            return math.sqrt(lam), it
        x, _ = np.linalg.qr(y)
        if b == n:
            # the block spans the whole space, so the Ritz value is exact
            return math.sqrt(lam), it
    raise ConvergenceError(
        f"power iteration did not converge in {max_iters} iterations",
        math.sqrt(lam),
        top_vec,
        max_iters,
    )


def gram_lanczos(a, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, seed=0):
    """Top singular value of ``a`` from implicitly restarted Lanczos on ``a a^H``.

    Returns ``(value, matvecs)``.  Krylov acceleration matters when the top of
    the spectrum is tightly clustered and plain power iteration would crawl.
    """
    rows, cols = a.shape
    if rows != cols:
        raise ValueError(f"op_norm expects a square operator, got {a.shape}")
    n = rows
    if n <= 2:
        return float(np.linalg.norm(to_dense(a), 2)), 0
    count = 0

    def gram(x):
        nonlocal count
        count += 1
        x = x.reshape(n, -1)
        return _matmat(a, _rmatmat(a, x))

    op = LinearOperator((n, n), matvec=gram, matmat=gram, dtype=np.complex128)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    # ARPACK cannot start from a vanishing Krylov space; same absolute floor as power iteration
    image = np.linalg.norm(gram(v0)) / np.linalg.norm(v0)
    if image <= tol * tol:
        return math.sqrt(image), count
    try:
        w = eigsh(op, k=1, which="LA", v0=v0, tol=tol, maxiter=max_iters,
                  ncv=min(n - 1, 24), return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        vals = exc.eigenvalues
        est = math.sqrt(max(float(vals[-1]), 0.0)) if len(vals) else float("nan")
        vec = exc.eigenvectors[:, -1] if len(vals) else None
        raise ConvergenceError("Lanczos did not converge", est, vec, max_iters) from exc
    return math.sqrt(max(float(w[-1]), 0.0)), count


def spectral_radius(a, max_dim: int | None = None) -> float:
    """Largest eigenvalue modulus from a full dense eigendecomposition."""
    limit = DEFAULT_DENSE_MAX_DIM if max_dim is None else max_dim
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {a.shape}")
    check_dim(a.shape[0], limit, "eigensolver input")
    a = to_dense(a)
    if a.shape[0] == 0:
        return 0.0
    if np.allclose(a, dagger(a), atol=1e-13, rtol=0):
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (a + dagger(a))))))
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def numerical_rank(a: np.ndarray, rtol: float = 1e-10) -> int:
    s = np.linalg.svd(np.asarray(a), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def haar_sample(q: int, seed) -> np.ndarray:
    """Haar-random ``q x q`` unitary from the QR decomposition of a Ginibre matrix.

    ``seed`` is an int, a :class:`numpy.random.SeedSequence` or a
    :class:`numpy.random.Generator`.
    """
    if q < 1:
        raise ValueError(f"dimension must be >= 1, got {q}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = (rng.standard_normal((q, q)) + 1j * rng.standard_normal((q, q))) / math.sqrt(2.0)
    qmat, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    phases = diag / np.abs(diag)
    return qmat * phases[np.newaxis, :]
