"""Named gates and seeded gate-set generators."""

from __future__ import annotations

import cmath
import math
from functools import reduce

import numpy as np

from .linalg import haar_sample
from .moments import GateEnsemble

_S2 = 1.0 / math.sqrt(2.0)

GATES = {
    "I": np.eye(2, dtype=complex),
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex),
    "T": np.diag([1.0, cmath.exp(1j * math.pi / 4)]),
    "S": np.diag([1.0, 1j]),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0 + 0j, -1.0]),
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "CZ": np.diag([1.0 + 0j, 1, 1, -1]),
    "SWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}


def phase(theta: float) -> np.ndarray:
    return np.diag([1.0, cmath.exp(1j * theta)])


def gate(name: str) -> np.ndarray:
    """Look up a named gate; ``phase(0.3)`` style names are parsed too."""
    key = name.strip()
    if key.startswith("phase(") and key.endswith(")"):
        return phase(float(key[len("phase(") : -1]))
    try:
        return GATES[key.upper()].copy()
    except KeyError:
        raise KeyError(f"unknown gate {name!r}; known: {sorted(GATES)} and phase(theta)") from None


def tensor(*names_or_mats) -> np.ndarray:
    mats = [gate(m) if isinstance(m, str) else np.asarray(m, dtype=complex) for m in names_or_mats]
    return reduce(np.kron, mats)


def th_ensemble() -> GateEnsemble:
    """``{(1/2, T), (1/2, H)}``: supported on a universal set but gapless."""
    return GateEnsemble.uniform([gate("T"), gate("H")])


def thi_ensemble() -> GateEnsemble:
    """``{(1/3, T), (1/3, H), (1/3, I)}``: the identity-augmented version."""
    return GateEnsemble.uniform([gate("T"), gate("H"), gate("I")])


def thi_product_ensemble() -> GateEnsemble:
    """Two-qubit ensemble ``A (x) B`` with ``A, B`` independent from ``{T, H, I}``."""
    names = ("T", "H", "I")
    return GateEnsemble.uniform([tensor(a, b) for a in names for b in names])


def random_ensemble(dim: int, size: int, seed, dirichlet: bool = True) -> GateEnsemble:
    """``size`` Haar-random members with Dirichlet(1) (or uniform) weights."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    unitaries = [haar_sample(dim, rng) for _ in range(size)]
    if dirichlet:
        probs = rng.dirichlet(np.ones(size))
    else:
        probs = np.full(size, 1.0 / size)
    return GateEnsemble(list(zip(probs, unitaries)))
