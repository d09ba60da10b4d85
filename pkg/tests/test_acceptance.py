"""Acceptance criteria AC1-AC11, each at its stated tolerance and time budget.

Every test appends one ``ACn PASS|FAIL ...`` line to the summary printed at
the end of the session, then asserts.
"""

import itertools
import math
import textwrap
import time

import numpy as np

from designgap import architectures as A
from designgap import bounds as B
from designgap.cli import main
from designgap.frame import frame_potential
from designgap.gate_gap import gap_sweep, radius_relation_check
from designgap.gates import random_ensemble, th_ensemble, thi_ensemble, thi_product_ensemble
from designgap.moments import (
    HaarEnsemble,
    convolution_bound_check,
    haar_projector,
    moment_operator,
    permutation_gram,
    spectral_gap,
)

from conftest import ACCEPTANCE_LINES, permutation_vectors, svd_norm

SLACK = 1e-8


def record(ac, passed, elapsed, limit, detail):
    ok = bool(passed) and elapsed < limit
    budget = "untimed" if math.isinf(limit) else f"of {limit:.0f}s"
    line = f"AC{ac} {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s {budget}) {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line
    assert elapsed < limit, line


def random_locals(rng, size=3):
    return lambda pair: random_ensemble(4, size, rng)


def cycles_oracle(perm):
    """Cycle count by repeatedly following the permutation from unvisited points."""
    left, count = set(range(len(perm))), 0
    while left:
        k = left.pop()
        count += 1
        k = perm[k]
        while k in left:
            left.remove(k)
            k = perm[k]
    return count


def test_ac1_projector_correctness():
    start = time.perf_counter()
    worst_idem = worst_herm = worst_gram = 0.0
    ranks = {}
    for q, t in [(2, 1), (2, 2), (3, 2), (2, 3)]:
        p = haar_projector(q, t).matrix
        worst_idem = max(worst_idem, np.abs(p @ p - p).max())
        worst_herm = max(worst_herm, np.abs(p - p.conj().T).max())
        ranks[(q, t)] = np.linalg.matrix_rank(p, tol=1e-8)
        perms = list(itertools.permutations(range(t)))
        closed = np.array([[float(q) ** (cycles_oracle([np.argsort(s)[x] for x in tau]) - t)
                            for tau in perms] for s in perms])
        vecs = permutation_vectors(q, t)
        inner = (vecs.conj().T @ vecs).real / q**t
        worst_gram = max(worst_gram, np.abs(permutation_gram(q, t) - closed).max(),
                         np.abs(inner - closed).max())
    passed = (worst_idem <= 1e-9 and worst_herm <= 1e-9 and worst_gram <= 1e-12
              and ranks[(2, 2)] == 2 and ranks[(2, 1)] == 1)
    record(1, passed, time.perf_counter() - start, 5,
           f"idempotency {worst_idem:.1e}, hermiticity {worst_herm:.1e}, gram {worst_gram:.1e}, "
           f"ranks {ranks[(2, 1)]},{ranks[(2, 2)]}")


def test_ac2_single_layer_bound():
    start = time.perf_counter()
    graph = [(0, 1), (1, 2), (2, 3), (0, 2)]
    families = [
        ("local N=3", lambda loc: A.make_1d_local(3, 2, loc), 1, 50),
        ("local N=4", lambda loc: A.make_1d_local(4, 2, loc), 1, 50),
        ("parallel N=4", lambda loc: A.make_1d_parallel(4, 2, loc), 1, 50),
        ("all-to-all N=3", lambda loc: A.make_all_to_all(3, 2, loc), 1, 50),
        ("graph N=4", lambda loc: A.make_graph(4, 2, graph, loc), 1, 50),
        ("local N=3 t=2", lambda loc: A.make_1d_local(3, 2, loc), 2, 10),
    ]
    failures, worst, count = [], math.inf, 0
    for name, build, t, seeds in families:
        for seed in range(seeds):
            check = B.prop1_check(build(random_locals(np.random.default_rng([2, seed]))), t)
            count += 1
            worst = min(worst, check.margin)
            if not check.lhs >= check.rhs - SLACK:
                failures.append((name, seed))
    record(2, not failures, time.perf_counter() - start, 600,
           f"{count} instances, worst margin {worst:.3e}, violations {failures}")


def test_ac3_brickwork_bound():
    start = time.perf_counter()
    failures, worst, count = [], math.inf, 0
    for n, t in [(3, 1), (3, 2), (4, 1)]:
        for seed in range(20):
            arch = A.make_brickwork_block(n, 2, random_locals(np.random.default_rng([3, n, t, seed])))
            check = B.brickwork_check(arch, t)
            count += 1
            worst = min(worst, check.margin)
            if not check.lhs >= check.rhs - SLACK:
                failures.append((n, t, seed))
    record(3, not failures, time.perf_counter() - start, 1200,
           f"{count} instances, worst margin {worst:.3e}, violations {failures}")


def test_ac4_decomposition_bound():
    start = time.perf_counter()
    layers = [[(0, 1), (4, 5)], [(0, 2)], [(2, 3)], [(3, 4)]]
    failures, worst = [], math.inf
    for seed in range(10):
        arch = A.make_fixed(6, 2, layers, random_locals(np.random.default_rng([4, seed])))
        check = B.lemma_decomp_check(arch, 1)
        # both sides recomputed from the reported factors
        lhs = 1 - math.prod(check.details["alphas"]) * math.prod(check.details["gammas"])
        rhs = (1 - check.details["gap"]) ** 2
        worst = min(worst, lhs - rhs)
        if not (lhs >= rhs - SLACK and check.passed):
            failures.append(seed)
    record(4, not failures, time.perf_counter() - start, 900,
           f"10 seeds, worst margin {worst:.3e}, violations {failures}")


def _formation_instances():
    haar = A.make_1d_local(3, 2, lambda pair: HaarEnsemble(4))
    thi = A.make_1d_local(3, 2, lambda pair: thi_product_ensemble())
    return [("haar", haar), ("thi", thi)]


def test_ac5_formation_depth_dominance():
    start = time.perf_counter()
    eps, t, details, passed = 0.01, 1, [], True
    for name, layer in _formation_instances():
        m = A.layer_moment(layer, t, dense=True)
        steps = B.empirical_formation_depth(m, eps)
        # independent count: dense matrix powers until the threshold eps * 2^-6
        r = m.matrix - haar_projector(8, t).matrix
        power, oracle = r.copy(), 1
        while svd_norm(power) > eps * 2.0**-6:
            power, oracle = power @ r, oracle + 1
        gap_h = spectral_gap(A.layer_moment(A.haarized_layer(layer), t)).gap
        l_h = B.haar_depth(gap_h, 3, t, 2, eps)
        bound = B.theorem1_depth(A.local_gap(layer, t), l_h)
        ok = steps == oracle and steps <= bound.depth
        if name == "haar":
            ok = ok and steps <= l_h.depth
        passed &= ok
        details.append(f"{name}: L={steps} theorem1={bound.depth:.2f} haar={l_h.depth:.2f}")
    record(5, passed, time.perf_counter() - start, 120, "; ".join(details))


def test_ac6_contraction():
    start = time.perf_counter()
    t, passed, worst = 1, True, math.inf
    for _, layer in _formation_instances():
        m = A.layer_moment(layer, t, dense=True)
        rep = spectral_gap(m)
        r = m.matrix - haar_projector(8, t).matrix
        for depth in (1, 2, 5, 10, 20):
            check = convolution_bound_check([rep] * depth, m.power(depth))
            oracle = svd_norm(np.linalg.matrix_power(r, depth))
            bound = math.exp(-depth * rep.gap)
            worst = min(worst, bound - oracle)
            passed &= check.passed and oracle <= bound + SLACK and abs(check.rhs - oracle) <= 1e-9
    record(6, passed, time.perf_counter() - start, 120,
           f"2 instances x 5 depths, worst margin {worst:.3e}")


def _ltog_cases(rng):
    shapes = [(2, 1, ((0, 1),)), (3, 1, ((0, 1),)), (3, 1, ((0, 2),)), (4, 1, ((0, 1), (2, 3))),
              (4, 1, ((1, 3),)), (2, 2, ((0, 1),))]
    for k in range(102):
        n, t, pairs = shapes[k % len(shapes)]
        yield A.Protocol(1.0, pairs, tuple(random_ensemble(4, 3, rng) for _ in pairs)), n, t


def _recursive_cases(rng):
    shapes = [(3, [[(0, 1)], [(1, 2)]]), (3, [[(0, 2)], [(0, 1)]]), (4, [[(0, 1), (2, 3)], [(1, 2)]]),
              (4, [[(0, 1), (2, 3)], [(0, 2)]]), (4, [[(0, 3), (1, 2)], [(1, 3)]])]
    for k in range(100):
        n, layers = shapes[k % len(shapes)]
        arch = A.make_fixed(n, 2, layers, random_locals(rng))
        yield arch.layers[1], A.layer_cluster(arch.layers[0])


def test_ac7_operator_inequalities():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    tallies = {}

    def tally(name, check):
        count, bad, worst = tallies.get(name, (0, 0, math.inf))
        tallies[name] = (count + 1, bad + (not check.lhs >= check.rhs - SLACK), min(worst, check.margin))

    for _ in range(120):
        k, dim = rng.integers(2, 6), rng.integers(2, 9)
        mats = [rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)) for _ in range(k)]
        tally("cauchy_schwarz", B.lemma_cs_check(mats, rng.dirichlet(np.ones(k))))
    for proto, n, t in _ltog_cases(rng):
        tally("local_to_global", B.lemma_ltog_check(proto, n, 2, t))
    for layer, mu in _recursive_cases(rng):
        tally("recursive", B.lemma_recursive_check(layer, mu, 1))
    for x, y in itertools.product(np.linspace(0, 1, 11), repeat=2):
        for l, k in itertools.product(range(5), repeat=2):
            tally("algebraic_grid", B.lemma_alg_check(float(x), float(y), l, k))
    passed = all(count >= 100 and bad == 0 for count, bad, _ in tallies.values())
    summary = ", ".join(f"{name} {c} ({b} bad, worst {w:.1e})" for name, (c, b, w) in tallies.items())
    record(7, passed, time.perf_counter() - start, 300, summary)


def test_ac8_radius_relation():
    start = time.perf_counter()
    ensembles = [random_ensemble(2, 3 + seed % 3, seed) for seed in range(30)] + [th_ensemble()]
    worst = 0.0
    for ens in ensembles:
        for t in (1, 2, 3):
            worst = max(worst, radius_relation_check(ens, t).residual)
    record(8, worst <= 1e-6, time.perf_counter() - start, 300,
           f"{len(ensembles)} ensembles x t=1..3, worst residual {worst:.2e}")


def test_ac9_identity_augmentation():
    start = time.perf_counter()
    thi_gaps = [spectral_gap(moment_operator(thi_ensemble(), t)).gap for t in range(1, 5)]
    sweep = gap_sweep(th_ensemble(), 4)
    emitted = sweep.t_values == [1, 2, 3, 4] and len(sweep.non_increasing) == 3
    record(9, all(g > 0 for g in thi_gaps) and emitted, time.perf_counter() - start, 300,
           f"thi gaps {[round(g, 6) for g in thi_gaps]}, th gaps {[f'{g:.1e}' for g in sweep.gaps]}, "
           f"non-increasing {sweep.non_increasing}")


def test_ac10_frame_potential():
    start = time.perf_counter()
    passed, details = True, []
    for n in (2, 3):
        layer = A.make_1d_local(n, 2, lambda pair: thi_product_ensemble())
        for t in (1, 2):
            est = frame_potential(layer, 2, t, 10_000, seed=10 * n + t)
            passed &= abs(est.z_score) <= 3
            details.append(f"N={n} t={t} z={est.z_score:+.2f}")
    for t in (1, 2):
        est = frame_potential(HaarEnsemble(8), 1, t, 10_000, seed=t)
        rank = haar_projector(8, t).rank
        passed &= est.exact_reference == rank and abs(est.mean - rank) <= 3 * est.std_error
        details.append(f"haar t={t} {est.mean:.3f} vs {rank}")
    record(10, passed, time.perf_counter() - start, 300, ", ".join(details))


def test_ac11_determinism(tmp_path, capsys):
    start = time.perf_counter()
    config = tmp_path / "verify.toml"
    config.write_text(textwrap.dedent("""
        seeds = [0, 1]
        [architecture]
        family = "local1d"
        n_sites = 3
        gates = "random(3)"
    """))
    outputs, codes = [], []
    for k in range(2):
        for fmt in ("csv", "json"):
            target = tmp_path / f"run{k}.{fmt}"
            codes.append(main(["verify", "--config", str(config), "--out", str(target), "--format", fmt]))
            outputs.append(target.read_bytes())
    capsys.readouterr()
    passed = codes == [0] * 4 and outputs[0] == outputs[2] and outputs[1] == outputs[3]
    record(11, passed, time.perf_counter() - start, math.inf,
           f"verify csv {len(outputs[0])} bytes and json {len(outputs[1])} bytes identical across runs")
