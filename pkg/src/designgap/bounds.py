"""Closed-form depth bounds and numerical verifiers for the gap inequalities.

Every ``*_check`` returns a :class:`~designgap.checks.BoundCheck` oriented as
``lhs >= rhs``.  Logarithms in depth formulas are natural; reports also carry
the base-2 variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import accumulate
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import aslinearoperator, eigsh

from .architectures import (
    Cluster,
    FixedArchitecture,
    LayerEnsemble,
    Protocol,
    alpha,
    block_local_gap,
    block_moment,
    cluster_operator,
    gamma,
    haarized_architecture,
    haarized_layer,
    layer_cluster,
    layer_moment,
    layers_moment,
    local_gap,
    make_brickwork_block,
    merge_clusters,
    protocol_local_gap,
    protocol_moment,
)
from .checks import BoundCheck
from .linalg import GuardrailError, dagger, identity_operator, max_dim, to_dense
from .moments import (
    HaarEnsemble,
    MomentOperator,
    haar_projector,
    residual,
    residual_norm,
    spectral_gap,
)

__all__ = [
    "BrickworkFloor",
    "DepthBound",
    "PatchworkDepth",
    "UnboundedDepthError",
    "FormationBudgetError",
    "averaged_local_gap",
    "brickwork_check",
    "brickwork_floor",
    "brickwork_haar_gap",
    "empirical_formation_depth",
    "f_complete",
    "f_incomplete",
    "h_exponent",
    "haar_depth",
    "lemma_alg_check",
    "lemma_cs_check",
    "lemma_decomp_check",
    "lemma_ltog_check",
    "lemma_recursive_check",
    "patchwork_depth",
    "prop1_check",
    "prop3_check",
    "theorem1_depth",
    "theorem2_depth",
]

DENSE_EIG_DIM = 1024


class UnboundedDepthError(ValueError):
    """A vanishing gap makes the depth bound infinite."""


class FormationBudgetError(RuntimeError):
    """Repeated products did not reach the target within the layer budget."""


@dataclass(frozen=True)
class DepthBound:
    depth: float
    formula: str
    inputs: dict = field(default_factory=dict)

    @property
    def layers(self) -> int:
        return math.ceil(self.depth)

    def as_row(self) -> dict:
        return {"formula": self.formula, "depth": self.depth, **self.inputs}


def _positive(name, value, upper=None):
    if not value > 0:
        raise UnboundedDepthError(f"{name} must be positive, got {value}")
    if upper is not None and value > upper + 1e-8:
        raise ValueError(f"{name}={value} exceeds {upper}")


def _log_budget(n, t, d, eps, log):
    return 2 * n * t * log(d) - log(eps)


def haar_depth(gap_h: float, n: int, t: int, d: int, eps: float) -> DepthBound:
    """``(2 N t ln d - ln eps) / gap_h``: depth at which repeated layers form a design."""
    _positive("Haar gap", gap_h, 1.0)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    depth = _log_budget(n, t, d, eps, math.log) / gap_h
    return DepthBound(
        depth,
        "haar",
        {"n": n, "t": t, "d": d, "eps": eps, "gap_haar": gap_h,
         "depth_base2": _log_budget(n, t, d, eps, math.log2) / gap_h},
    )


def theorem1_depth(local_gap_avg: float, l_h: DepthBound) -> DepthBound:
    """``2 L_H / local_gap_avg`` for single-layer-connected circuits."""
    _positive("averaged local gap", local_gap_avg, 1.0)
    inputs = dict(l_h.inputs)
    inputs.update({"local_gap": local_gap_avg, "haar_depth": l_h.depth})
    if "depth_base2" in inputs:
        inputs["depth_base2"] = 2 * inputs["depth_base2"] / local_gap_avg
    return DepthBound(2 * l_h.depth / local_gap_avg, "theorem1", inputs)


def averaged_local_gap(per_layer_gaps: Sequence[float]) -> float:
    """Smallest running average of the per-layer local gaps."""
    gaps = list(per_layer_gaps)
    if not gaps:
        raise ValueError("need at least one layer gap")
    return min(s / k for k, s in enumerate(accumulate(gaps), start=1))


def theorem2_depth(
    local_gap_avg: float, l: int, f_value: float, n: int, t: int, d: int, eps: float
) -> DepthBound:
    """``gap^-l f^(1-l) l (2 N t ln d - ln eps)`` for fixed architectures."""
    _positive("averaged local gap", local_gap_avg, 1.0)
    _positive("brickwork floor", f_value, 1.0)
    if l < 1:
        raise ValueError("connection depth must be >= 1")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    scale = local_gap_avg ** (-l) * f_value ** (1 - l) * l
    return DepthBound(
        scale * _log_budget(n, t, d, eps, math.log),
        "theorem2",
        {"n": n, "t": t, "d": d, "eps": eps, "local_gap": local_gap_avg,
         "connection_depth": l, "f": f_value,
         "depth_base2": scale * _log_budget(n, t, d, eps, math.log2)},
    )


@dataclass(frozen=True)
class PatchworkDepth:
    xi: int
    m: float
    m_haar: float
    c0: float
    inputs: dict = field(default_factory=dict)

    @property
    def total_depth(self) -> float:
        return 2 * self.m

    def as_row(self) -> dict:
        return {"formula": "patchwork", "xi": self.xi, "depth": self.m,
                "m_haar": self.m_haar, "total_depth": self.total_depth,
                "c0": self.c0, "level": "order", **self.inputs}


def patchwork_depth(n: int, t: int, eps: float, local_gap: float, c0: float = 1.0) -> PatchworkDepth:
    """Patch half-width and per-patch depth for qubit patchwork circuits.

    ``xi = ceil(log2(N t^2 / eps))`` and ``m = c0 (xi t + ln(N/eps)) / gap^2``.
    Only the order of the Haar depth is known, so ``c0`` is a free constant.
    """
    _positive("local gap", local_gap, 1.0)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    xi = max(1, math.ceil(math.log2(n * t * t / eps)))
    m_haar = c0 * (xi * t + math.log(n / eps))
    return PatchworkDepth(xi, m_haar / local_gap**2, m_haar, c0,
                          {"n": n, "t": t, "eps": eps, "local_gap": local_gap})


def empirical_formation_depth(m: MomentOperator, eps: float, max_depth: int = 100_000) -> int:
    """Smallest ``L`` with ``||M^L - P|| <= eps / q^{2t}`` (by repeated products)."""
    p = haar_projector(m.q, m.t)
    r = residual(m, p)
    target = eps / m.dim
    dense = isinstance(r, np.ndarray)
    power = r
    for depth in range(1, max_depth + 1):
        if dense:
            norm = float(np.linalg.norm(power, 2))
        else:
            norm = residual_norm(power)[0]
        if norm <= target:
            return depth
        power = r @ power if dense else aslinearoperator(r) @ power
    raise FormationBudgetError(f"no formation within {max_depth} layers")


# -- single-layer and brickwork gaps ------------------------------------------


def prop1_check(layer: LayerEnsemble, t: int) -> BoundCheck:
    """``gap >= (local_gap / 2) * haarized gap`` for a single-layer ensemble."""
    gap = spectral_gap(layer_moment(layer, t)).gap
    gap_h = spectral_gap(layer_moment(haarized_layer(layer), t)).gap
    loc = local_gap(layer, t)
    return BoundCheck(
        "prop1", gap, loc / 2 * gap_h,
        details={"gap": gap, "gap_haar": gap_h, "local_gap": loc, "t": t, "n": layer.n_sites},
    )


def brickwork_check(arch: FixedArchitecture, t: int) -> BoundCheck:
    """``gap >= local_gap^2 * haarized gap`` for a two-layer block."""
    if arch.connection_depth != 2:
        raise ValueError("brickwork bound applies to two-layer blocks")
    gap = spectral_gap(block_moment(arch, t)).gap
    gap_h = spectral_gap(block_moment(haarized_architecture(arch), t)).gap
    loc = block_local_gap(arch, t)
    return BoundCheck(
        "brickwork", gap, loc**2 * gap_h,
        details={"gap": gap, "gap_haar": gap_h, "local_gap": loc, "t": t, "n": arch.n_sites},
    )


@lru_cache(maxsize=64)
def brickwork_haar_gap(m: int, d: int, t: int) -> float:
    """Spectral gap of the Haar two-layer brickwork block on ``m`` sites."""
    arch = make_brickwork_block(m, d, HaarEnsemble(d * d))
    return spectral_gap(block_moment(arch, t)).gap


def h_exponent(n: int) -> int:
    """``8 ceil(log2 floor(log2(N + 1))) + 1`` in exact integer arithmetic."""
    if n < 1:
        raise ValueError("need N >= 1")
    inner = (n + 1).bit_length() - 1
    return 8 * (inner - 1).bit_length() + 1


@dataclass(frozen=True)
class BrickworkFloor:
    f_complete: float
    f_incomplete: float
    h: int
    m_values: tuple[int, ...]
    gaps: tuple[float, ...]
    truncated: bool


def brickwork_floor(n: int, t: int, d: int, m_max: int | None = None) -> BrickworkFloor:
    """Minimum Haar brickwork gap over ``3 <= m <= min(N, m_max)``.

    Blocks with fewer than three sites are not brickwork and are skipped.
    ``truncated`` is set when the minimum does not reach ``m = N``.
    """
    budget_m = 1
    while d ** (2 * t * (budget_m + 1)) <= max_dim():
        budget_m += 1
    upper = min(n, budget_m if m_max is None else m_max)
    if upper > budget_m:
        raise GuardrailError(f"m={upper} exceeds the dimension budget (largest m={budget_m})")
    m_values = tuple(range(3, upper + 1))
    if n >= 3 and not m_values:
        raise GuardrailError("no brickwork size fits the budget")
    gaps = tuple(brickwork_haar_gap(m, d, t) for m in m_values)
    f_c = min(gaps, default=1.0)
    h = h_exponent(n)
    return BrickworkFloor(f_c, f_c**h, h, m_values, gaps, truncated=upper < n)


def f_complete(n: int, t: int, d: int, m_max: int | None = None) -> float:
    return brickwork_floor(n, t, d, m_max).f_complete


def f_incomplete(n: int, t: int, d: int, m_max: int | None = None) -> float:
    return brickwork_floor(n, t, d, m_max).f_incomplete


def prop3_check(arch: FixedArchitecture, t: int, m_max: int | None = None) -> BoundCheck:
    """``gap >= local_gap^l * LB`` with ``LB`` the complete/incomplete floor."""
    gap = spectral_gap(block_moment(arch, t)).gap
    loc = block_local_gap(arch, t)
    floor = brickwork_floor(arch.n_sites, t, arch.local_dim, m_max)
    f = floor.f_complete if arch.is_complete else floor.f_incomplete
    l = arch.connection_depth
    return BoundCheck(
        "prop3", gap, loc**l * f,
        details={"gap": gap, "local_gap": loc, "connection_depth": l, "floor": f,
                 "complete": arch.is_complete, "truncated": floor.truncated,
                 "rhs_from_decomposition": loc**l * f ** (l - 1), "t": t, "n": arch.n_sites},
    )


# -- block decomposition -------------------------------------------------------


def lemma_decomp_check(arch: FixedArchitecture, t: int) -> BoundCheck:
    """``1 - prod(alpha) prod(gamma) >= (1 - gap)^2`` for a connected block."""
    n, d = arch.n_sites, arch.local_dim
    gap = spectral_gap(block_moment(arch, t)).gap
    alphas = [alpha(layer, t) for layer in arch.layers]
    clusters = [layer_cluster(layer) for layer in arch.layers]
    gammas = []
    haar_vs_cluster = []
    prefix = clusters[0]
    for j in range(1, len(clusters)):
        merged = merge_clusters(clusters[j], prefix)
        gammas.append(gamma(clusters[j], prefix, merged, n, d, t))
        prefix = merged
        haar_layers = [haarized_layer(x) for x in arch.layers[: j + 1]]
        haar_prefix = layers_moment(haar_layers, t, dense=False).as_operator()
        diff = haar_prefix - cluster_operator(prefix, n, d, t)
        haar_vs_cluster.append(residual_norm(_small_dense(diff))[0])
    prod = math.prod(alphas) * math.prod(gammas)
    return BoundCheck(
        "lemma_decomp", 1.0 - prod, (1.0 - gap) ** 2,
        details={"gap": gap, "alpha_product": math.prod(alphas),
                 "gamma_product": math.prod(gammas), "alphas": alphas, "gammas": gammas,
                 "haar_vs_cluster": haar_vs_cluster, "t": t, "n": n},
    )


def _small_dense(op):
    return to_dense(op) if op.shape[0] <= DENSE_EIG_DIM else op


# -- operator inequalities ----------------------------------------------------


def _min_eig(op) -> float:
    """Smallest eigenvalue of a Hermitian operator (dense or implicit)."""
    if isinstance(op, np.ndarray) or op.shape[0] <= DENSE_EIG_DIM:
        a = to_dense(op)
        return float(np.linalg.eigvalsh(0.5 * (a + dagger(a)))[0])
    w = eigsh(op, k=1, which="SA", tol=1e-12, return_eigenvectors=False,
              v0=np.random.default_rng(0).standard_normal(op.shape[0]) + 0j)
    return float(w[0])


def lemma_cs_check(matrices: Sequence[np.ndarray], probabilities: Sequence[float]) -> BoundCheck:
    """``sum q M M^H - (sum q M)(sum q M)^H`` is positive semidefinite."""
    probs = np.asarray(probabilities, dtype=float)
    if abs(probs.sum() - 1) > 1e-12 or np.any(probs < 0):
        raise ValueError("probabilities must be a distribution")
    mats = [np.asarray(m, dtype=np.complex128) for m in matrices]
    mean = sum(q * m for q, m in zip(probs, mats))
    second = sum(q * (m @ dagger(m)) for q, m in zip(probs, mats))
    low = _min_eig(second - mean @ dagger(mean))
    return BoundCheck("lemma_cs", low, 0.0, slack=1e-10, details={"count": len(mats)})


def lemma_alg_check(x: float, y: float, l: int, k: int) -> BoundCheck:
    """``(1 - (1-x)^l (1-y)^k)^2 >= 1 - (1-x^2)^l (1-y^2)^k`` on ``[0, 1]``."""
    if not (0 <= x <= 1 and 0 <= y <= 1) or l < 0 or k < 0:
        raise ValueError("need x, y in [0, 1] and nonnegative l, k")
    lhs = (1 - (1 - x) ** l * (1 - y) ** k) ** 2
    rhs = 1 - (1 - x * x) ** l * (1 - y * y) ** k
    return BoundCheck("lemma_alg", lhs, rhs, details={"x": x, "y": y, "l": l, "k": k})


def lemma_ltog_check(protocol: Protocol, n: int, d: int, t: int) -> BoundCheck:
    """``M M^H <= (1-g)^2 1 + (1-(1-g)^2) M_haar`` for one protocol of disjoint gates.

    ``lhs`` is the smallest eigenvalue of right side minus left side.
    """
    g = protocol_local_gap(protocol, t)
    haar = Protocol(protocol.probability, protocol.pairs,
                    (HaarEnsemble(d * d),) * protocol.n_gates)
    m = protocol_moment(protocol, n, d, t, dense=False).as_operator()
    mh = protocol_moment(haar, n, d, t, dense=False).as_operator()
    s = (1 - g) ** 2
    dim = m.shape[0]
    diff = s * identity_operator(dim) + (1 - s) * mh - m @ m.H
    return BoundCheck("lemma_ltog", _min_eig(diff), 0.0,
                      details={"local_gap": g, "n": n, "t": t, "gates": protocol.n_gates})


def lemma_recursive_check(layer: LayerEnsemble, c_mu: Cluster, t: int) -> BoundCheck:
    """``M P_mu M^H <= (1 - a g) 1 + a g P_merge`` for a single-protocol layer."""
    n, d = layer.n_sites, layer.local_dim
    c_nu = layer_cluster(layer)
    merged = merge_clusters(c_nu, c_mu)
    a = alpha(layer, t)
    g = gamma(c_nu, c_mu, merged, n, d, t)
    m = layer_moment(layer, t, dense=False).as_operator()
    p_mu = cluster_operator(c_mu, n, d, t)
    p_merge = cluster_operator(merged, n, d, t)
    ag = a * g
    diff = (1 - ag) * identity_operator(m.shape[0]) + ag * p_merge - m @ p_mu @ m.H
    return BoundCheck("lemma_recursive", _min_eig(diff), 0.0,
                      details={"alpha": a, "gamma": g, "n": n, "t": t})
