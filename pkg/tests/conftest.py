"""Independent reference implementations used as test oracles.

These are deliberately naive (explicit loops, pseudo-inverses, full
decompositions) so that they share no code path with the package.
"""

import itertools

import numpy as np
import pytest


def rand_unitary(q, rng):
    z = rng.normal(size=(q, q)) + 1j * rng.normal(size=(q, q))
    u, r = np.linalg.qr(z)
    return u * (np.diag(r) / abs(np.diag(r)))


def replica_oracle(u, t):
    """``U^{(x)t} (x) conj(U)^{(x)t}`` entry by entry."""
    q = u.shape[0]
    factors = [u] * t + [u.conj()] * t
    n = q ** (2 * t)
    out = np.empty((n, n), dtype=complex)
    for a, rows in enumerate(itertools.product(range(q), repeat=2 * t)):
        for b, cols in enumerate(itertools.product(range(q), repeat=2 * t)):
            out[a, b] = np.prod([f[i, j] for f, i, j in zip(factors, rows, cols)])
    return out


def moment_oracle(members, t):
    return sum(p * replica_oracle(u, t) for p, u in members)


def permutation_vectors(q, t):
    """Unnormalised ``sum_i |i_1..i_t> (x) |i_perm(1)..i_perm(t)>`` for every permutation."""
    vecs = []
    for perm in itertools.permutations(range(t)):
        v = np.zeros(q ** (2 * t), dtype=complex)
        for idx in itertools.product(range(q), repeat=t):
            second = tuple(idx[perm[k]] for k in range(t))
            flat = 0
            for digit in idx + second:
                flat = flat * q + digit
            v[flat] = 1.0
        vecs.append(v)
    return np.array(vecs).T


def projector_oracle(q, t):
    """Orthogonal projector onto the permutation span via a pseudo-inverse Gram."""
    v = permutation_vectors(q, t)
    g = v.conj().T @ v
    return v @ np.linalg.pinv(g, rcond=1e-10, hermitian=True) @ v.conj().T


def embed_oracle(op, n, d, t, sites):
    """Brute-force embedding: copy ``op`` entries onto the target legs, delta elsewhere."""
    legs = 2 * t * n
    target = [r * n + s for r in range(2 * t) for s in sites]
    rest = [a for a in range(legs) if a not in target]
    dim = d**legs
    out = np.zeros((dim, dim), dtype=complex)
    multi = list(itertools.product(range(d), repeat=legs))

    def local_index(m, axes):
        k = 0
        for a in axes:
            k = k * d + m[a]
        return k

    for a, mo in enumerate(multi):
        for b, mi in enumerate(multi):
            if all(mo[x] == mi[x] for x in rest):
                out[a, b] = op[local_index(mo, target), local_index(mi, target)]
    return out


def svd_norm(a):
    return float(np.linalg.svd(np.asarray(a), compute_uv=False)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
