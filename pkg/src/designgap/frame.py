"""Monte Carlo frame potentials and a sampler for random circuits."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .architectures import FixedArchitecture, LayerEnsemble, block_moment, layer_moment, layers_moment
from .linalg import apply_axes, check_dim, max_dim
from .moments import GateEnsemble, HaarEnsemble, MomentOperator, haar_projector, moment_operator

__all__ = ["FrameEstimate", "exact_frame_potential", "frame_potential", "sample_circuit"]

UNITARY_BUDGET = 4096
EXACT_CHUNK = 256

Circuit = Union[LayerEnsemble, FixedArchitecture, GateEnsemble, HaarEnsemble]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for sample ``index``; independent of evaluation order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def _system(arch: Circuit) -> tuple[int, int]:
    """``(n_sites, local_dim)``; a bare ensemble is one site of its dimension."""
    if isinstance(arch, (LayerEnsemble, FixedArchitecture)):
        return arch.n_sites, arch.local_dim
    return 1, arch.dim


def _apply_layer(layer: LayerEnsemble, u: np.ndarray, rng) -> np.ndarray:
    probs = [p.probability for p in layer.protocols]
    proto = layer.protocols[rng.choice(len(probs), p=probs)] if len(probs) > 1 else layer.protocols[0]
    n, d = layer.n_sites, layer.local_dim
    for pair, ens in zip(proto.pairs, proto.local_ensembles):
        u = apply_axes(ens.sample(rng), u, list(pair), n, d)
    return u


def sample_circuit(arch: Circuit, depth: int, seed) -> np.ndarray:
    """One ``d^N x d^N`` unitary from ``depth`` independently sampled layers.

    Fixed architectures cycle through their layers; a bare gate ensemble is a
    single-site circuit whose layers are draws from the ensemble.
    """
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    n, d = _system(arch)
    dim = d**n
    check_dim(dim, UNITARY_BUDGET, "sampled unitary")
    rng = _rng(seed)
    u = np.eye(dim, dtype=np.complex128)
    for k in range(depth):
        if isinstance(arch, LayerEnsemble):
            u = _apply_layer(arch, u, rng)
        elif isinstance(arch, FixedArchitecture):
            u = _apply_layer(arch.layers[k % arch.connection_depth], u, rng)
        else:
            u = arch.sample(rng) @ u
    return u


def _circuit_moment(arch: Circuit, depth: int, t: int) -> MomentOperator | None:
    n, d = _system(arch)
    if d ** (2 * t * n) > max_dim():
        return None
    if isinstance(arch, LayerEnsemble):
        return layer_moment(arch, t).power(depth)
    if isinstance(arch, FixedArchitecture):
        full, rest = divmod(depth, arch.connection_depth)
        m = block_moment(arch, t).power(full)
        if rest:
            # later layers act after the complete blocks
            m = layers_moment(arch.layers[:rest], t) @ m
        return m
    return moment_operator(arch, t).power(depth)


def exact_frame_potential(arch: Circuit, depth: int, t: int) -> float | None:
    """``tr(M^H M)`` for the depth-``depth`` circuit, or ``None`` beyond budget."""
    if isinstance(arch, HaarEnsemble):
        return float(haar_projector(arch.dim, t).rank) if depth > 0 else float(arch.dim ** (2 * t))
    m = _circuit_moment(arch, depth, t)
    if m is None:
        return None
    if m.is_dense:
        return float(np.sum(np.abs(m.data) ** 2))
    op = m.as_operator()
    total = 0.0
    for start in range(0, m.dim, EXACT_CHUNK):
        stop = min(start + EXACT_CHUNK, m.dim)
        cols = np.zeros((m.dim, stop - start), dtype=np.complex128)
        cols[np.arange(start, stop), np.arange(stop - start)] = 1.0
        total += float(np.sum(np.abs(op.matmat(cols)) ** 2))
    return total


@dataclass(frozen=True)
class FrameEstimate:
    t: int
    samples: int
    mean: float
    std_error: float
    exact_reference: float | None = None

    @property
    def z_score(self) -> float | None:
        if self.exact_reference is None:
            return None
        if self.std_error == 0:
            return 0.0 if self.mean == self.exact_reference else math.inf
        return (self.mean - self.exact_reference) / self.std_error

    def as_row(self) -> dict:
        return {"t": self.t, "samples": self.samples, "mean": self.mean,
                "std_error": self.std_error, "exact_reference": self.exact_reference}


def frame_potential(
    arch: Circuit,
    depth: int,
    t: int,
    n_samples: int,
    seed: int = 0,
    exact: bool = True,
) -> FrameEstimate:
    """Mean of ``|tr(U^H V)|^{2t}`` over independent circuit pairs.

    Sample ``i`` draws both circuits from its own counter-based stream, so the
    estimate does not depend on how samples are scheduled.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples for a standard error")
    values = np.empty(n_samples)
    for i in range(n_samples):
        rng = sample_stream(seed, i)
        u = sample_circuit(arch, depth, rng)
        v = sample_circuit(arch, depth, rng)
        values[i] = abs(np.vdot(u, v)) ** (2 * t)
    ref = exact_frame_potential(arch, depth, t) if exact else None
    return FrameEstimate(t, n_samples, float(values.mean()),
                         float(values.std(ddof=1) / math.sqrt(n_samples)), ref)
