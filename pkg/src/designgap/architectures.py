"""Circuit layers, fixed architectures and cluster projectors.

Sites are 0-based.  A gate on the pair ``(i, j)`` acts on qudit ``i`` (x)
qudit ``j`` in that order.  Operators on the ``N``-site replica space are
dense below :data:`IMPLICIT_ABOVE` and implicit
:class:`~scipy.sparse.linalg.LinearOperator` objects above it.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .linalg import SiteEmbedding, apply_axes, check_dim, dagger, to_dense
from .moments import (
    Ensemble,
    GateEnsemble,
    HaarEnsemble,
    HaarProjector,
    MomentOperator,
    haar_projector,
    moment_operator,
    residual_norm,
    spectral_gap,
)

__all__ = [
    "Cluster",
    "FixedArchitecture",
    "LayerEnsemble",
    "Protocol",
    "alpha",
    "block_local_gap",
    "block_moment",
    "cluster_operator",
    "cluster_projector",
    "gamma",
    "haarized_architecture",
    "haarized_layer",
    "layer_cluster",
    "layer_moment",
    "layers_moment",
    "local_gap",
    "local_moment",
    "make_1d_local",
    "make_1d_parallel",
    "make_all_to_all",
    "make_brickwork_block",
    "make_fixed",
    "make_graph",
    "merge_clusters",
    "pair_gap",
    "protocol_local_gap",
    "patchwork_assemble",
    "protocol_moment",
]

IMPLICIT_ABOVE = 1024
PROB_ATOL = 1e-12

Pair = tuple[int, int]
Locals = Union[Ensemble, Mapping, Callable[[Pair], Ensemble]]


# -- union-find --------------------------------------------------------------


class _DisjointSets:
    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self) -> list[tuple[int, ...]]:
        out: dict[int, list[int]] = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return sorted(tuple(sorted(g)) for g in out.values())


def _connected(n_sites: int, pairs) -> bool:
    ds = _DisjointSets()
    for s in range(n_sites):
        ds.find(s)
    for i, j in pairs:
        ds.union(i, j)
    return len(ds.groups()) == 1


# -- data types --------------------------------------------------------------


@dataclass(frozen=True)
class Protocol:
    """Gates applied simultaneously on disjoint pairs, chosen with ``probability``."""

    probability: float
    pairs: tuple[Pair, ...]
    local_ensembles: tuple[Ensemble, ...]

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "local_ensembles", tuple(self.local_ensembles))
        if self.probability < 0:
            raise ValueError(f"negative protocol probability {self.probability}")
        if len(self.local_ensembles) != len(pairs):
            raise ValueError("need exactly one local ensemble per pair")
        sites = [s for p in pairs for s in p]
        if len(set(sites)) != len(sites):
            raise ValueError(f"protocol pairs overlap: {pairs}")

    @property
    def n_gates(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class LayerEnsemble:
    """One circuit layer: a random choice among protocols."""

    n_sites: int
    local_dim: int
    protocols: tuple[Protocol, ...]

    def __post_init__(self):
        object.__setattr__(self, "protocols", tuple(self.protocols))
        if self.n_sites < 1 or self.local_dim < 2:
            raise ValueError("need n_sites >= 1 and local_dim >= 2")
        if not self.protocols:
            raise ValueError("a layer needs at least one protocol")
        total = sum(p.probability for p in self.protocols)
        if abs(total - 1.0) > PROB_ATOL:
            raise ValueError(f"protocol probabilities sum to {total!r}, not 1")
        d2 = self.local_dim**2
        for proto in self.protocols:
            for (i, j), ens in zip(proto.pairs, proto.local_ensembles):
                if not (0 <= i < self.n_sites and 0 <= j < self.n_sites) or i == j:
                    raise ValueError(f"invalid pair {(i, j)} for {self.n_sites} sites")
                if ens.dim != d2:
                    raise ValueError(f"local ensemble on {(i, j)} has dim {ens.dim}, expected {d2}")

    def pairs(self) -> list[Pair]:
        return [pair for proto in self.protocols for pair in proto.pairs]

    def dim(self, t: int) -> int:
        return self.local_dim ** (2 * t * self.n_sites)


@dataclass(frozen=True)
class Cluster:
    """Disjoint groups of sites joined by gates."""

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        blocks = tuple(sorted(tuple(sorted(int(s) for s in b)) for b in self.blocks if len(b)))
        sites = [s for b in blocks for s in b]
        if len(set(sites)) != len(sites):
            raise ValueError(f"cluster blocks overlap: {blocks}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_pairs(cls, pairs) -> Cluster:
        ds = _DisjointSets()
        for i, j in pairs:
            ds.union(i, j)
        return cls(tuple(ds.groups()))

    @property
    def sites(self) -> set[int]:
        return {s for b in self.blocks for s in b}


@dataclass(frozen=True)
class FixedArchitecture:
    """A connected block of deterministic layers.

    Every layer holds a single protocol of probability 1 and the union of all
    layers' pairs connects the ``n_sites`` sites.
    """

    n_sites: int
    local_dim: int
    layers: tuple[LayerEnsemble, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("architecture needs at least one layer")
        for layer in self.layers:
            if (layer.n_sites, layer.local_dim) != (self.n_sites, self.local_dim):
                raise ValueError("layer does not match the architecture's sites")
            if len(layer.protocols) != 1 or abs(layer.protocols[0].probability - 1) > PROB_ATOL:
                raise ValueError("fixed-architecture layers must have one protocol of probability 1")
        pairs = [p for layer in self.layers for p in layer.pairs()]
        if not _connected(self.n_sites, pairs):
            raise ValueError("the layers' gates do not connect all sites")

    @property
    def connection_depth(self) -> int:
        return len(self.layers)

    @property
    def is_complete(self) -> bool:
        full = self.n_sites // 2
        return all(len(layer.pairs()) == full for layer in self.layers)

    def layer_pairs(self) -> list[list[Pair]]:
        return [layer.pairs() for layer in self.layers]


# -- constructors ------------------------------------------------------------


def _resolver(locals_: Locals) -> Callable[[int, Pair], Ensemble]:
    if isinstance(locals_, (GateEnsemble, HaarEnsemble)):
        return lambda layer, pair: locals_
    if isinstance(locals_, Mapping):
        def lookup(layer, pair):
            for key in ((layer, pair), pair):
                if key in locals_:
                    return locals_[key]
            raise KeyError(f"no local ensemble for pair {pair} (layer {layer})")
        return lookup
    if callable(locals_):
        return lambda layer, pair: locals_(pair)
    raise TypeError(f"cannot interpret {type(locals_).__name__} as local ensembles")


def _layer(n, d, protocols, locals_, layer_index=0) -> LayerEnsemble:
    get = _resolver(locals_)
    protos = [
        Protocol(p, tuple(pairs), tuple(get(layer_index, pair) for pair in pairs))
        for p, pairs in protocols
    ]
    return LayerEnsemble(n, d, tuple(protos))


def _need_sites(n, minimum=2):
    if n < minimum:
        raise ValueError(f"need at least {minimum} sites, got {n}")


def make_1d_local(n: int, d: int, locals_: Locals) -> LayerEnsemble:
    """One nearest-neighbour gate per layer, uniformly placed on an open chain."""
    _need_sites(n)
    return _layer(n, d, [(1.0 / (n - 1), [(i, i + 1)]) for i in range(n - 1)], locals_)


def make_all_to_all(n: int, d: int, locals_: Locals) -> LayerEnsemble:
    _need_sites(n)
    pairs = list(itertools.combinations(range(n), 2))
    return _layer(n, d, [(1.0 / len(pairs), [p]) for p in pairs], locals_)


def make_graph(n: int, d: int, edges, locals_: Locals) -> LayerEnsemble:
    """One gate per layer on a uniformly chosen edge of a connected graph."""
    _need_sites(n)
    edges = [(int(i), int(j)) for i, j in edges]
    if len({frozenset(e) for e in edges}) != len(edges):
        raise ValueError("duplicate edges")
    if any(i == j for i, j in edges):
        raise ValueError("self-loops are not gates")
    if not _connected(n, edges):
        raise ValueError("graph does not connect all sites")
    return _layer(n, d, [(1.0 / len(edges), [e]) for e in edges], locals_)


def make_1d_parallel(n: int, d: int, locals_: Locals) -> LayerEnsemble:
    """Even or odd bonds of a chain, each with probability 1/2.

    For odd ``n`` the trailing site is idle in the first protocol.
    """
    _need_sites(n)
    first = [(i, i + 1) for i in range(0, n - 1, 2)]
    second = [(i, i + 1) for i in range(1, n - 1, 2)]
    return _layer(n, d, [(0.5, first), (0.5, second)], locals_)


def make_fixed(n: int, d: int, layer_pairs: Sequence[Sequence[Pair]], locals_: Locals) -> FixedArchitecture:
    """Fixed architecture from explicit per-layer pair lists.

    A mapping of local ensembles may be keyed by ``pair`` or ``(layer, pair)``.
    """
    layers = [
        _layer(n, d, [(1.0, [tuple(p) for p in pairs])], locals_, idx)
        for idx, pairs in enumerate(layer_pairs)
    ]
    return FixedArchitecture(n, d, tuple(layers))


def make_brickwork_block(n: int, d: int, locals_: Locals) -> FixedArchitecture:
    """Two-layer brickwork block: bonds (0,1),(2,3),... then (1,2),(3,4),..."""
    _need_sites(n, 3)
    first = [(i, i + 1) for i in range(0, n - 1, 2)]
    second = [(i, i + 1) for i in range(1, n - 1, 2)]
    return make_fixed(n, d, [first, second], locals_)


def haarized_layer(layer: LayerEnsemble) -> LayerEnsemble:
    """Same placements and probabilities with every local ensemble made Haar."""
    haar = HaarEnsemble(layer.local_dim**2)
    protos = tuple(
        Protocol(p.probability, p.pairs, (haar,) * p.n_gates) for p in layer.protocols
    )
    return LayerEnsemble(layer.n_sites, layer.local_dim, protos)


def haarized_architecture(arch: FixedArchitecture) -> FixedArchitecture:
    return FixedArchitecture(arch.n_sites, arch.local_dim, tuple(haarized_layer(x) for x in arch.layers))


# -- local moments and gaps --------------------------------------------------


@lru_cache(maxsize=128)
def local_moment(ens: Ensemble, t: int) -> np.ndarray:
    """Dense two-qudit moment matrix (cached per ensemble object)."""
    out = moment_operator(ens, t).matrix
    out.setflags(write=False)
    return out


@lru_cache(maxsize=256)
def pair_gap(ens: Ensemble, t: int) -> float:
    if isinstance(ens, HaarEnsemble):
        return 1.0
    return spectral_gap(moment_operator(ens, t)).gap


def local_gap(layer: LayerEnsemble, t: int) -> float:
    """Smallest two-qudit spectral gap among all gates of the layer."""
    gaps = [pair_gap(e, t) for p in layer.protocols for e in p.local_ensembles]
    return min(gaps, default=1.0)


def protocol_local_gap(protocol: Protocol, t: int) -> float:
    return min((pair_gap(e, t) for e in protocol.local_ensembles), default=1.0)


def block_local_gap(arch: FixedArchitecture, t: int) -> float:
    return min(local_gap(layer, t) for layer in arch.layers)


# -- implicit operator machinery ---------------------------------------------


@dataclass(frozen=True)
class _Placement:
    """A local factor on ``sites``: a dense matrix or a Haar projector."""

    factor: object
    sites: tuple[int, ...]

    def forward(self):
        f = self.factor
        return f.apply if isinstance(f, HaarProjector) else f

    def adjoint(self):
        f = self.factor
        return f.apply if isinstance(f, HaarProjector) else dagger(f)


def _local_factor(ens: Ensemble, t: int):
    if isinstance(ens, HaarEnsemble):
        return haar_projector(ens.dim, t)
    return local_moment(ens, t)


def _apply_chain(chain, x, n, d, t, adjoint=False):
    steps = reversed(chain) if adjoint else chain
    for pl in steps:
        axes = SiteEmbedding(n, d, t, pl.sites).target_axes()
        x = apply_axes(pl.adjoint() if adjoint else pl.forward(), x, axes, 2 * t * n, d)
    return x


def _mixture_operator(terms, n, d, t) -> LinearOperator:
    """``sum_k w_k (product of placements_k)``; each chain applies left to right."""
    dim = d ** (2 * t * n)
    check_dim(dim, None, "circuit operator")

    def mat(x, adjoint=False):
        x = np.asarray(x, dtype=np.complex128)
        out = np.zeros_like(x)
        for w, chain in terms:
            if w:
                out += w * _apply_chain(chain, x, n, d, t, adjoint)
        return out

    return LinearOperator(
        (dim, dim),
        matvec=mat,
        rmatvec=lambda x: mat(x, True),
        matmat=mat,
        rmatmat=lambda x: mat(x, True),
        dtype=np.complex128,
    )


def _finish(op: LinearOperator, q: int, t: int, dense: bool | None) -> MomentOperator:
    if dense is None:
        dense = op.shape[0] <= IMPLICIT_ABOVE
    data = to_dense(op) if dense else op
    return MomentOperator(q, t, data)


def _protocol_chain(proto: Protocol, t: int):
    return [_Placement(_local_factor(e, t), pair) for pair, e in zip(proto.pairs, proto.local_ensembles)]


def protocol_moment(proto: Protocol, n: int, d: int, t: int, dense: bool | None = None) -> MomentOperator:
    op = _mixture_operator([(1.0, _protocol_chain(proto, t))], n, d, t)
    return _finish(op, d**n, t, dense)


def layer_moment(layer: LayerEnsemble, t: int, dense: bool | None = None) -> MomentOperator:
    """``sum_eta q_eta (x)_pairs M_pair (x) 1``; dense unless the space is large."""
    n, d = layer.n_sites, layer.local_dim
    terms = [(p.probability, _protocol_chain(p, t)) for p in layer.protocols]
    return _finish(_mixture_operator(terms, n, d, t), d**n, t, dense)


def layers_moment(layers: Sequence[LayerEnsemble], t: int, dense: bool | None = None) -> MomentOperator:
    """``M_l ... M_2 M_1`` for single-protocol layers applied first to last."""
    if not layers:
        raise ValueError("need at least one layer")
    n, d = layers[0].n_sites, layers[0].local_dim
    chain = []
    for layer in layers:
        if len(layer.protocols) != 1 or (layer.n_sites, layer.local_dim) != (n, d):
            raise ValueError("layers must be single-protocol and share sites")
        chain.extend(_protocol_chain(layer.protocols[0], t))
    return _finish(_mixture_operator([(1.0, chain)], n, d, t), d**n, t, dense)


def block_moment(arch: FixedArchitecture, t: int, dense: bool | None = None) -> MomentOperator:
    """``M_l ... M_2 M_1`` for the layers of a connected block."""
    return layers_moment(arch.layers, t, dense)


# -- clusters ----------------------------------------------------------------


def merge_clusters(a: Cluster, b: Cluster) -> Cluster:
    """Union of two clusters, merging blocks that share a site."""
    ds = _DisjointSets()
    for block in a.blocks + b.blocks:
        ds.find(block[0])
        for s in block[1:]:
            ds.union(block[0], s)
    return Cluster(tuple(ds.groups()))


def layer_cluster(layer: LayerEnsemble) -> Cluster:
    if len(layer.protocols) != 1:
        raise ValueError("the cluster of a layer is defined for single-protocol layers")
    return Cluster.from_pairs(layer.pairs())


def _cluster_chain(c: Cluster, t: int, d: int):
    return [_Placement(haar_projector(d ** len(b), t), b) for b in c.blocks]


def cluster_operator(c: Cluster, n: int, d: int, t: int) -> LinearOperator:
    """Implicit ``(x)_blocks P_block (x) 1_rest``."""
    if c.sites and max(c.sites) >= n:
        raise ValueError(f"cluster {c.blocks} does not fit in {n} sites")
    return _mixture_operator([(1.0, _cluster_chain(c, t, d))], n, d, t)


def cluster_projector(c: Cluster, n: int, d: int, t: int) -> np.ndarray:
    return to_dense(cluster_operator(c, n, d, t))


def _maybe_dense(op: LinearOperator):
    return to_dense(op) if op.shape[0] <= IMPLICIT_ABOVE else op


def gamma(
    c_nu: Cluster,
    c_mu: Cluster,
    c_merge: Cluster | None,
    n: int,
    d: int,
    t: int,
) -> float:
    """``1 - ||P_mu P_nu - P_merge||^2`` for cluster projectors."""
    if c_merge is None:
        c_merge = merge_clusters(c_nu, c_mu)
    p_nu = cluster_operator(c_nu, n, d, t)
    p_mu = cluster_operator(c_mu, n, d, t)
    p_merge = cluster_operator(c_merge, n, d, t)
    norm, _, _ = residual_norm(_maybe_dense(p_mu @ p_nu - p_merge))
    value = 1.0 - norm**2
    if not -1e-8 <= value <= 1 + 1e-8:
        raise ArithmeticError(f"gamma={value} outside [0, 1]")
    return value


def alpha(layer: LayerEnsemble, t: int) -> float:
    """``1 - ||M_layer - P_cluster||^2`` for a single-protocol layer."""
    n, d = layer.n_sites, layer.local_dim
    m = layer_moment(layer, t, dense=False).as_operator()
    p = cluster_operator(layer_cluster(layer), n, d, t)
    norm, _, _ = residual_norm(_maybe_dense(m - p))
    return 1.0 - norm**2


# -- patchwork ---------------------------------------------------------------


def patchwork_assemble(
    n: int,
    xi: int,
    patch_arch: FixedArchitecture,
    t: int,
    m: int,
    dense: bool | None = None,
) -> MomentOperator:
    """Two staggered layers of ``2 xi``-site patches, each patch ``m`` blocks deep.

    The first layer covers sites ``[0, 2xi), [2xi, 4xi), ...`` and the second
    ``[xi, 3xi), [3xi, 5xi), ...`` as far as whole patches fit.  When no shifted
    patch fits (``xi = n/2``) the second layer repeats the first placement.
    """
    width = 2 * xi
    if xi < 1 or n % width:
        raise ValueError(f"{n} sites cannot be tiled by patches of {width}")
    if patch_arch.n_sites != width:
        raise ValueError(f"patch architecture has {patch_arch.n_sites} sites, expected {width}")
    if m < 0:
        raise ValueError("patch depth must be nonnegative")
    d = patch_arch.local_dim
    patch = block_moment(patch_arch, t, dense=True).power(m).matrix
    first = list(range(0, n, width))
    second = [s for s in range(xi, n, width) if s + width <= n] or first
    chain = [_Placement(patch, tuple(range(s, s + width))) for s in first + second]
    return _finish(_mixture_operator([(1.0, chain)], n, d, t), d**n, t, dense)
