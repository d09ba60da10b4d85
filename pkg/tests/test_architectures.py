import itertools
from collections import deque
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from designgap import architectures as A
from designgap.architectures import Cluster
from designgap.gates import gate, random_ensemble, thi_product_ensemble
from designgap.moments import GateEnsemble, HaarEnsemble, haar_projector, moment_operator, spectral_gap

from conftest import embed_oracle, projector_oracle, svd_norm

HAAR4 = HaarEnsemble(4)


def _protocol_summary(layer):
    return sorted((round(p.probability, 12), p.pairs) for p in layer.protocols)


# -- global-unitary oracle ----------------------------------------------------


def _global_gate(u, pair, n):
    """Two-site gate on ``pair`` as an ``2^n x 2^n`` matrix (site 0 most significant)."""
    i, j = pair
    rest = [s for s in range(n) if s not in pair]
    full = np.kron(u, np.eye(2 ** (n - 2)))
    order = [i, j] + rest
    inv = np.argsort(order)
    t = full.reshape((2,) * (2 * n)).transpose(list(inv) + [n + k for k in inv])
    return t.reshape(2**n, 2**n)


def _replica(u, t):
    return reduce(np.kron, [u] * t + [u.conj()] * t)


def layer_oracle(layer, t):
    """Average of ``U^{(x)t,t}`` over every global unitary the layer can produce."""
    n = layer.n_sites
    acc = 0
    for proto in layer.protocols:
        choices = [ens.members for ens in proto.local_ensembles]
        for combo in itertools.product(*choices):
            weight = proto.probability * np.prod([p for p, _ in combo])
            u = np.eye(2**n)
            for (_, g), pair in zip(combo, proto.pairs):
                u = _global_gate(g, pair, n) @ u
            acc = acc + weight * _replica(u, t)
    return acc


# -- constructors -------------------------------------------------------------


def test_1d_local_protocols():
    layer = A.make_1d_local(3, 2, HAAR4)
    assert _protocol_summary(layer) == [(0.5, ((0, 1),)), (0.5, ((1, 2),))]


def test_all_to_all_protocols():
    layer = A.make_all_to_all(3, 2, HAAR4)
    assert len(layer.protocols) == 3
    assert all(p.probability == pytest.approx(1 / 3) for p in layer.protocols)


def test_1d_parallel_protocols():
    layer = A.make_1d_parallel(4, 2, HAAR4)
    assert _protocol_summary(layer) == [(0.5, ((0, 1), (2, 3))), (0.5, ((1, 2),))]


def test_graph_validation():
    A.make_graph(4, 2, [(0, 1), (1, 2), (2, 3), (0, 2)], HAAR4)
    with pytest.raises(ValueError, match="connect"):
        A.make_graph(4, 2, [(0, 1), (2, 3)], HAAR4)
    with pytest.raises(ValueError, match="duplicate"):
        A.make_graph(3, 2, [(0, 1), (1, 0), (1, 2)], HAAR4)
    with pytest.raises(ValueError, match="self"):
        A.make_graph(3, 2, [(0, 1), (1, 1), (1, 2)], HAAR4)


def test_local_dimension_mismatch():
    with pytest.raises(ValueError):
        A.make_1d_local(3, 3, HAAR4)


def test_brickwork_structure():
    b4 = A.make_brickwork_block(4, 2, HAAR4)
    assert b4.layer_pairs() == [[(0, 1), (2, 3)], [(1, 2)]]
    assert not b4.is_complete
    b3 = A.make_brickwork_block(3, 2, HAAR4)
    assert b3.layer_pairs() == [[(0, 1)], [(1, 2)]]


def _bfs_connected(n, pairs):
    adj = {s: set() for s in range(n)}
    for i, j in pairs:
        adj[i].add(j)
        adj[j].add(i)
    seen, todo = {0}, deque([0])
    while todo:
        for nb in adj[todo.popleft()] - seen:
            seen.add(nb)
            todo.append(nb)
    return len(seen) == n


@pytest.mark.parametrize("n", range(3, 9))
def test_brickwork_union_connected(n):
    b = A.make_brickwork_block(n, 2, HAAR4)
    assert _bfs_connected(n, [p for layer in b.layer_pairs() for p in layer])
    assert b.connection_depth == 2


def test_fixed_rejects_disconnected():
    with pytest.raises(ValueError):
        A.make_fixed(4, 2, [[(0, 1)], [(2, 3)]], HAAR4)


def test_per_pair_locals_mapping():
    x = GateEnsemble.singleton(np.kron(gate("X"), gate("X")))
    layer = A.make_1d_local(3, 2, {(0, 1): x, (1, 2): HAAR4})
    assert layer.protocols[0].local_ensembles[0] is x
    assert A.local_gap(layer, 1) == pytest.approx(0.0, abs=1e-10)


# -- layer moments ------------------------------------------------------------


def test_single_pair_layer_is_pair_moment():
    e = random_ensemble(4, 3, 2)
    layer = A.make_1d_local(2, 2, e)
    assert np.allclose(A.layer_moment(layer, 1).matrix, moment_operator(e, 1).matrix, atol=1e-14)


def test_haar_1d_local_matches_embedding_sum():
    layer = A.make_1d_local(3, 2, HAAR4)
    p2 = projector_oracle(4, 1)
    expect = (embed_oracle(p2, 3, 2, 1, (0, 1)) + embed_oracle(p2, 3, 2, 1, (1, 2))) / 2
    assert np.abs(A.layer_moment(layer, 1).matrix - expect).max() <= 1e-12


@pytest.mark.parametrize("maker,n", [(A.make_1d_local, 3), (A.make_1d_parallel, 4), (A.make_all_to_all, 3)])
def test_layer_moment_matches_global_unitary_oracle(maker, n):
    rng = np.random.default_rng(n)
    layer = maker(n, 2, lambda pair: random_ensemble(4, 2, rng))
    got = A.layer_moment(layer, 1).matrix
    assert np.abs(got - layer_oracle(layer, 1)).max() <= 1e-12


def test_layer_moment_t2_matches_oracle():
    layer = A.make_1d_local(2, 2, random_ensemble(4, 3, 9))
    assert np.abs(A.layer_moment(layer, 2).matrix - layer_oracle(layer, 2)).max() <= 1e-12


def test_implicit_and_dense_routes_agree(rng):
    layer = A.make_1d_parallel(4, 2, lambda pair: random_ensemble(4, 2, rng))
    dense = A.layer_moment(layer, 1, dense=True).matrix
    implicit = A.layer_moment(layer, 1, dense=False)
    assert not implicit.is_dense
    x = rng.normal(size=(256, 3)) + 1j * rng.normal(size=(256, 3))
    assert np.allclose(implicit.as_operator().matmat(x), dense @ x, atol=1e-12)
    assert np.allclose(implicit.as_operator().rmatmat(x), dense.conj().T @ x, atol=1e-12)


def test_implicit_t2_matvec_matches_replica_contraction():
    # N=3, t=2 is only ever implicit; check it on a few vectors
    rng = np.random.default_rng(4)
    layer = A.make_1d_local(3, 2, lambda pair: random_ensemble(4, 2, rng))
    op = A.layer_moment(layer, 2).as_operator()
    x = rng.normal(size=(4096, 2)) + 1j * rng.normal(size=(4096, 2))
    expect = 0
    for proto in layer.protocols:
        (pair,), (ens,) = proto.pairs, proto.local_ensembles
        for p, g in ens.members:
            u = _global_gate(g, pair, 3)
            tens = x.reshape(8, 8, 8, 8, 2)
            out = np.einsum("ai,bj,ck,dl,ijklz->abcdz", u, u, u.conj(), u.conj(), tens)
            expect = expect + proto.probability * p * out.reshape(4096, 2)
    assert np.abs(op.matmat(x) - expect).max() <= 1e-11


def test_haarized_layer():
    haar = A.make_1d_local(3, 2, HAAR4)
    assert A.haarized_layer(haar) == haar
    thi = A.make_1d_local(3, 2, thi_product_ensemble())
    hz = A.haarized_layer(thi)
    assert [p.pairs for p in hz.protocols] == [p.pairs for p in thi.protocols]
    assert all(isinstance(e, HaarEnsemble) for p in hz.protocols for e in p.local_ensembles)


def test_haarized_gap_matches_projector_embedding():
    hz = A.haarized_layer(A.make_1d_local(3, 2, thi_product_ensemble()))
    p2 = projector_oracle(4, 1)
    m = (embed_oracle(p2, 3, 2, 1, (0, 1)) + embed_oracle(p2, 3, 2, 1, (1, 2))) / 2
    expect = 1 - svd_norm(m - projector_oracle(8, 1))
    assert spectral_gap(A.layer_moment(hz, 1)).gap == pytest.approx(expect, abs=1e-9)
    assert expect == pytest.approx(0.5, abs=1e-12)


# -- local gaps ---------------------------------------------------------------


def test_local_gap_cases():
    assert A.local_gap(A.make_1d_local(3, 2, HAAR4), 2) == 1.0
    one = GateEnsemble.singleton(np.kron(gate("H"), gate("T")))
    mixed = A.make_1d_local(3, 2, {(0, 1): HAAR4, (1, 2): one})
    assert A.local_gap(mixed, 1) == pytest.approx(0.0, abs=1e-10)


def test_thi_product_local_gap_t2_matches_svd():
    e = thi_product_ensemble()
    m = moment_operator(e, 2).matrix
    expect = 1 - svd_norm(m - projector_oracle(4, 2))
    assert A.pair_gap(e, 2) == pytest.approx(expect, abs=1e-9)


# -- clusters -----------------------------------------------------------------


def test_cluster_normalisation():
    c = Cluster(((2, 1), (), (0,)))
    assert c.blocks == ((0,), (1, 2))
    with pytest.raises(ValueError):
        Cluster(((0, 1), (1, 2)))


def test_cluster_of_all_sites_and_empty():
    full = A.cluster_projector(Cluster(((0, 1, 2),)), 3, 2, 1)
    assert np.allclose(full, haar_projector(8, 1).matrix, atol=1e-14)
    assert np.allclose(A.cluster_projector(Cluster(()), 3, 2, 1), np.eye(64))


def test_cluster_pair_matches_embedding():
    got = A.cluster_projector(Cluster(((0, 1),)), 3, 2, 1)
    assert np.abs(got - embed_oracle(projector_oracle(4, 1), 3, 2, 1, (0, 1))).max() <= 1e-12


def test_merge_joins_overlapping_blocks():
    merged = A.merge_clusters(Cluster(((1, 2), (5, 6))), Cluster(((1, 3),)))
    assert merged.blocks == ((1, 2, 3), (5, 6))
    c = Cluster(((0, 4),))
    assert A.merge_clusters(c, Cluster(())) == c


partitions = st.lists(st.lists(st.integers(0, 7), min_size=1, max_size=3, unique=True),
                      max_size=3).map(
    lambda blocks: Cluster.from_pairs(
        [(b[0], s) for b in blocks for s in b]
    )
)


@settings(max_examples=200, deadline=None)
@given(partitions, partitions, partitions)
def test_merge_commutative_associative(a, b, c):
    assert A.merge_clusters(a, b) == A.merge_clusters(b, a)
    assert A.merge_clusters(A.merge_clusters(a, b), c) == A.merge_clusters(a, A.merge_clusters(b, c))


def test_gamma_trivial_cases():
    c = Cluster(((0, 1),))
    assert A.gamma(c, c, None, 3, 2, 2) == pytest.approx(1.0, abs=1e-10)
    assert A.gamma(Cluster(((0, 1),)), Cluster(((2, 3),)), None, 4, 2, 1) == pytest.approx(1.0, abs=1e-10)


def test_gamma_overlapping_t1_matches_dense():
    c_nu, c_mu = Cluster(((0, 1),)), Cluster(((1, 2),))
    p12 = embed_oracle(projector_oracle(4, 1), 3, 2, 1, (0, 1))
    p23 = embed_oracle(projector_oracle(4, 1), 3, 2, 1, (1, 2))
    expect = 1 - svd_norm(p23 @ p12 - projector_oracle(8, 1)) ** 2
    assert A.gamma(c_nu, c_mu, None, 3, 2, 1) == pytest.approx(expect, abs=1e-9)


def test_gamma_overlapping_t2_frozen():
    # restrict to the range of P12: ||P23 P12 - P||^2 = lambda_max(B^H (P23 - P) B)
    rng = np.random.default_rng(0)
    p12 = A.cluster_operator(Cluster(((0, 1),)), 3, 2, 2)
    p23 = A.cluster_operator(Cluster(((1, 2),)), 3, 2, 2)
    pall = A.cluster_operator(Cluster(((0, 1, 2),)), 3, 2, 2)
    sketch = p12.matmat(rng.normal(size=(4096, 40)) + 0j)
    u, s, _ = np.linalg.svd(sketch, full_matrices=False)
    basis = u[:, s > 1e-8 * s[0]]
    assert basis.shape[1] == 32
    reduced = basis.conj().T @ (p23.matmat(basis) - pall.matmat(basis))
    expect = 1 - np.linalg.eigvalsh(0.5 * (reduced + reduced.conj().T)).max()
    got = A.gamma(Cluster(((0, 1),)), Cluster(((1, 2),)), None, 3, 2, 2)
    assert got == pytest.approx(expect, abs=1e-9)
    assert got == pytest.approx(0.84, abs=1e-9)


def test_alpha_cases():
    assert A.alpha(A.make_1d_local(2, 2, HAAR4), 1) == pytest.approx(1.0, abs=1e-10)
    haar_pair = A.make_fixed(3, 2, [[(0, 1)], [(1, 2)]], HAAR4).layers[0]
    assert A.alpha(haar_pair, 2) == pytest.approx(1.0, abs=1e-10)
    cnot = GateEnsemble.singleton(gate("CNOT"))
    assert A.alpha(A.make_1d_local(2, 2, cnot), 1) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        A.alpha(A.make_1d_local(3, 2, HAAR4), 1)


@pytest.mark.parametrize("seed", range(6))
def test_alpha_local_gap_relation(seed):
    rng = np.random.default_rng(seed)
    layer = A.make_fixed(4, 2, [[(0, 1), (2, 3)], [(1, 2)]],
                         lambda pair: random_ensemble(4, 2, rng)).layers[0]
    a = A.alpha(layer, 1)
    g = A.local_gap(layer, 1)
    assert a >= 1 - (1 - g) ** 2 - 1e-8


# -- patchwork ----------------------------------------------------------------


def _two_site_patch():
    return A.make_fixed(2, 2, [[(0, 1)]], HAAR4)


def test_patchwork_haar_xi1_matches_direct_product():
    got = A.patchwork_assemble(4, 1, _two_site_patch(), 1, 1).matrix
    p2 = projector_oracle(4, 1)
    first = embed_oracle(p2, 4, 2, 1, (0, 1)) @ embed_oracle(p2, 4, 2, 1, (2, 3))
    second = embed_oracle(p2, 4, 2, 1, (1, 2))
    assert np.abs(got - second @ first).max() <= 1e-12
    assert spectral_gap(A.patchwork_assemble(4, 1, _two_site_patch(), 1, 1)).gap == pytest.approx(
        1 - svd_norm(second @ first - projector_oracle(16, 1)), abs=1e-9)


def test_patchwork_single_patch_repeats():
    rng = np.random.default_rng(1)
    patch = A.make_brickwork_block(4, 2, lambda pair: random_ensemble(4, 2, rng))
    m = A.block_moment(patch, 1).matrix
    got = A.patchwork_assemble(4, 2, patch, 1, 2).matrix
    m2 = m @ m
    assert np.abs(got - m2 @ m2).max() <= 1e-12


def test_patchwork_zero_depth_is_identity():
    got = A.patchwork_assemble(4, 1, _two_site_patch(), 1, 0).matrix
    assert np.allclose(got, np.eye(256))


def test_patchwork_rejects_bad_tiling():
    with pytest.raises(ValueError):
        A.patchwork_assemble(5, 1, _two_site_patch(), 1, 1)
