"""Run configuration: TOML documents describing an architecture and a command.

A minimal file::

    t = 1
    eps = 0.01
    seeds = [0, 1]

    [architecture]
    family = "local1d"
    n_sites = 3
    local_dim = 2
    gates = "random(3)"

Gate references are resolved per pair with a generator seeded from the run
seed, so ``random(k)`` gives every pair its own draw.
"""

from __future__ import annotations

import hashlib
import re
import sys
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import architectures as arch_mod
from .gates import gate, random_ensemble, tensor, th_ensemble, thi_ensemble, thi_product_ensemble
from .linalg import haar_sample, max_dim
from .moments import Ensemble, GateEnsemble, HaarEnsemble

__all__ = ["ConfigError", "RunConfig", "build_architecture", "build_ensemble", "load_config", "parse_config"]

COMMANDS = ("gap", "depth", "verify", "sweep", "frame")
FAMILIES = ("local1d", "parallel1d", "alltoall", "graph", "brickwork", "fixed", "patchwork")
CHECKS = ("prop1", "brickwork", "prop3", "lemma_decomp", "lemma_cs", "lemma_alg",
          "radius_relation", "convolution")
PRESETS = {"th": th_ensemble, "thi": thi_ensemble, "thi_product": thi_product_ensemble}

DEFAULT_BUDGETS = {"max_dim": 4096, "m_max": 6, "formation_max_depth": 100_000,
                   "eig_dim": 1024, "samples": 10_000}

_CALL = re.compile(r"^(\w+)\((.*)\)$")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _get(table: dict, key: str, path: str, kind, default=None, required=False):
    if key not in table:
        if required:
            _fail(f"{path}.{key}" if path else key, "missing required field")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool) and kind is not bool):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        _fail(f"{path}.{key}" if path else key, f"expected {name}, got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class RunConfig:
    command: str | None
    t: int
    eps: float
    seeds: tuple[int, ...]
    budgets: dict
    architecture: dict | None
    ensemble: Any = None
    checks: tuple[str, ...] = CHECKS
    sweep: dict = field(default_factory=dict)
    frame: dict = field(default_factory=dict)
    depth: dict = field(default_factory=dict)
    source_digest: str = ""

    def with_seed(self, seed: int) -> RunConfig:
        return RunConfig(**{**self.__dict__, "seeds": (seed,)})


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_config(raw.decode("utf-8"))


_KEYS = {
    "": {"command", "t", "eps", "seeds", "budgets", "architecture", "ensemble", "checks",
         "sweep", "frame", "depth"},
    "architecture": {"family", "n_sites", "local_dim", "gates", "edges", "layers", "xi", "patch_depth"},
    "ensemble": {"dim", "gates"},
    "sweep": {"parameter", "values"},
    "frame": {"depth", "samples", "t_values"},
    "depth": {"c0"},
}


def _known(table, section):
    for key in table:
        if key not in _KEYS[section]:
            _fail(f"{section}.{key}" if section else key, "unknown field")


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    _known(doc, "")
    for section in ("architecture", "ensemble", "sweep", "frame", "depth"):
        if isinstance(doc.get(section), dict):
            _known(doc[section], section)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    command = _get(doc, "command", "", str)
    if command is not None and command not in COMMANDS:
        _fail("command", f"unknown command {command!r}; expected one of {COMMANDS}")
    t = _get(doc, "t", "", int, 1)
    if t < 1:
        _fail("t", "must be >= 1")
    eps = _get(doc, "eps", "", float, 0.01)
    if not eps > 0:
        _fail("eps", "must be positive")
    seeds = _get(doc, "seeds", "", list, [0])
    if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        _fail("seeds", "expected a list of nonnegative integers")

    budgets = dict(DEFAULT_BUDGETS)
    for key, value in _get(doc, "budgets", "", dict, {}).items():
        if key not in DEFAULT_BUDGETS:
            _fail(f"budgets.{key}", "unknown budget")
        budgets[key] = _get({key: value}, key, "budgets", int)
        if budgets[key] < 1:
            _fail(f"budgets.{key}", "must be positive")
    if budgets["max_dim"] > max_dim():
        _fail("budgets.max_dim", f"exceeds the global guardrail {max_dim()}")

    arch = _get(doc, "architecture", "", dict)
    if arch is not None:
        _validate_architecture(arch)
    ensemble = doc.get("ensemble")
    if ensemble is not None:
        ens_dim = _get(ensemble if isinstance(ensemble, dict) else {}, "dim", "ensemble", int, 2)
        if ens_dim < 2:
            _fail("ensemble.dim", "must be >= 2")
        if "gates" not in ensemble:
            _fail("ensemble.gates", "missing required field")
        _validate_gates(ensemble["gates"], "ensemble.gates")

    checks = _get(doc, "checks", "", list, list(CHECKS))
    for name in checks:
        if name not in CHECKS:
            _fail("checks", f"unknown check {name!r}; expected any of {CHECKS}")

    sweep = _get(doc, "sweep", "", dict, {})
    if sweep:
        param = _get(sweep, "parameter", "sweep", str, required=True)
        if param not in ("t", "n_sites"):
            _fail("sweep.parameter", "expected 't' or 'n_sites'")
        values = _get(sweep, "values", "sweep", list, required=True)
        if not all(isinstance(v, int) and v >= 1 for v in values):
            _fail("sweep.values", "expected positive integers")

    frame = _get(doc, "frame", "", dict, {})
    if frame:
        if _get(frame, "depth", "frame", int, 1) < 0:
            _fail("frame.depth", "must be nonnegative")
        if _get(frame, "samples", "frame", int, budgets["samples"]) < 2:
            _fail("frame.samples", "need at least two samples")

    depth = _get(doc, "depth", "", dict, {})
    if depth:
        _get(depth, "c0", "depth", float, 1.0)

    return RunConfig(command, t, eps, tuple(seeds), budgets, arch, ensemble,
                     tuple(checks), sweep, frame, depth, digest)


def _validate_architecture(arch: dict):
    p = "architecture"
    family = _get(arch, "family", p, str, required=True)
    if family not in FAMILIES:
        _fail(f"{p}.family", f"unknown family {family!r}; expected one of {FAMILIES}")
    n = _get(arch, "n_sites", p, int, required=True)
    d = _get(arch, "local_dim", p, int, 2)
    if n < 2:
        _fail(f"{p}.n_sites", "need at least 2 sites")
    if d < 2:
        _fail(f"{p}.local_dim", "local dimension must be >= 2")
    if family == "graph":
        edges = _get(arch, "edges", p, list, required=True)
        if not all(isinstance(e, list) and len(e) == 2 for e in edges):
            _fail(f"{p}.edges", "expected a list of [i, j] pairs")
    if family == "fixed":
        layers = _get(arch, "layers", p, list, required=True)
        for k, layer in enumerate(layers):
            if not all(isinstance(e, list) and len(e) == 2 for e in layer):
                _fail(f"{p}.layers[{k}]", "expected a list of [i, j] pairs")
    if family == "patchwork":
        xi = _get(arch, "xi", p, int, required=True)
        if 2 * xi < 3 or 2 * xi > n:
            _fail(f"{p}.xi", "need 3 <= 2*xi <= n_sites")
        if _get(arch, "patch_depth", p, int, 1) < 1:
            _fail(f"{p}.patch_depth", "must be >= 1")
    _validate_gates(arch.get("gates", "haar"), f"{p}.gates")


def _validate_gates(ref, path):
    if isinstance(ref, str):
        m = _CALL.match(ref.strip())
        if ref in ("haar", *PRESETS) or (m and m.group(1) == "random"):
            return
        _gate_item(ref, path)
    elif isinstance(ref, list):
        if not ref:
            _fail(path, "empty gate list")
        for k, item in enumerate(ref):
            _gate_item(item, f"{path}[{k}]")
    elif isinstance(ref, dict):
        members = _get(ref, "members", path, list, required=True)
        _validate_gates(members, f"{path}.members")
        weights = _get(ref, "weights", path, list)
        if weights is not None and len(weights) != len(members):
            _fail(f"{path}.weights", "length differs from members")
        _get(ref, "strict", path, bool, True)
    else:
        _fail(path, f"cannot interpret {type(ref).__name__} as a gate set")


def _gate_item(item, path, rng=None) -> np.ndarray:
    """Resolve one member: a name, ``haar(seed)``, a tensor list or a literal."""
    try:
        if isinstance(item, str):
            m = _CALL.match(item.strip())
            if m and m.group(1) == "haar":
                seed, _, dim = m.group(2).partition(",")
                return haar_sample(int(dim) if dim else 2, int(seed))
            return gate(item)
        if isinstance(item, list) and all(isinstance(x, str) for x in item):
            return tensor(*item)
        if isinstance(item, dict):
            re_part = np.asarray(item.get("re", 0.0), dtype=float)
            im_part = np.asarray(item.get("im", np.zeros_like(re_part)), dtype=float)
            mat = re_part + 1j * im_part
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"literal matrix must be square, got shape {mat.shape}")
            return mat
    except (KeyError, ValueError) as exc:
        _fail(path, str(exc).strip("'\""))
    _fail(path, f"cannot interpret {item!r} as a gate")


def build_ensemble(ref, dim: int, rng: np.random.Generator) -> Ensemble:
    """Gate set of dimension ``dim`` from a config reference."""
    if isinstance(ref, str):
        key = ref.strip()
        if key == "haar":
            return HaarEnsemble(dim)
        if key in PRESETS:
            return _checked(PRESETS[key](), dim, key)
        m = _CALL.match(key)
        if m and m.group(1) == "random":
            return random_ensemble(dim, int(m.group(2)), rng)
        return _checked(GateEnsemble.singleton(_gate_item(key, "gates")), dim, key)
    if isinstance(ref, list):
        return _checked(GateEnsemble.uniform([_gate_item(x, "gates") for x in ref]), dim, "gates")
    members = [_gate_item(x, "gates.members") for x in ref["members"]]
    weights = ref.get("weights") or [1.0 / len(members)] * len(members)
    return _checked(GateEnsemble(list(zip(weights, members)), strict=ref.get("strict", True)),
                    dim, "gates")


def _checked(e: GateEnsemble, dim: int, what: str) -> GateEnsemble:
    if e.dim != dim:
        raise ConfigError(f"{what}: gates act on dimension {e.dim}, expected {dim}")
    return e


def _locals(ref, dim: int, rng) -> Callable:
    cache = {}

    def get(pair):
        if pair not in cache:
            cache[pair] = build_ensemble(ref, dim, rng)
        return cache[pair]

    return get


def build_architecture(arch: dict, seed: int, gates=None):
    """Architecture for one seed; patchwork yields ``(n, xi, patch, depth)``."""
    rng = np.random.default_rng(seed)
    n, d = arch["n_sites"], arch.get("local_dim", 2)
    locals_ = _locals(arch.get("gates", "haar") if gates is None else gates, d * d, rng)
    family = arch["family"]
    try:
        if family == "local1d":
            return arch_mod.make_1d_local(n, d, locals_)
        if family == "parallel1d":
            return arch_mod.make_1d_parallel(n, d, locals_)
        if family == "alltoall":
            return arch_mod.make_all_to_all(n, d, locals_)
        if family == "graph":
            return arch_mod.make_graph(n, d, [tuple(e) for e in arch["edges"]], locals_)
        if family == "brickwork":
            return arch_mod.make_brickwork_block(n, d, locals_)
        if family == "fixed":
            return arch_mod.make_fixed(n, d, [[tuple(e) for e in layer] for layer in arch["layers"]], locals_)
        xi = arch["xi"]
        patch = arch_mod.make_brickwork_block(2 * xi, d, locals_)
        return n, xi, patch, arch.get("patch_depth", 1)
    except ValueError as exc:
        raise ConfigError(f"architecture: {exc}") from None
