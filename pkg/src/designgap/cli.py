"""``designgap`` command-line front end."""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import __version__
from . import architectures as A
from . import bounds as B
from .config import ConfigError, RunConfig, build_architecture, build_ensemble, load_config
from .frame import frame_potential
from .gate_gap import RELATION_ATOL, radius_relation_check
from .linalg import GuardrailError, check_dim, max_dim
from .checks import BoundCheck
from .moments import ResidualOrthogonalityError, convolution_bound_check, moment_operator, spectral_gap
from .report import Report

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

SWEEP_COLUMNS = ["parameter", "value", "seed", "metric", "result"]


class Outcome:
    """Rows plus the flags that decide the exit status."""

    def __init__(self):
        self.report = Report()
        self.failed = False
        self.truncated = False


# -- shared construction -------------------------------------------------------


def _system_dim(cfg: RunConfig, arch: dict | None, t: int) -> int:
    if arch is None:
        return _ensemble_dim(cfg) ** (2 * t)
    return arch.get("local_dim", 2) ** (2 * t * arch["n_sites"])


def _ensemble_dim(cfg: RunConfig) -> int:
    return cfg.ensemble.get("dim", 2)


def _build(cfg: RunConfig, seed: int, arch: dict | None = None):
    arch = cfg.architecture if arch is None else arch
    if arch is None:
        if cfg.ensemble is None:
            raise ConfigError("config needs an [architecture] or [ensemble] section")
        return build_ensemble(cfg.ensemble["gates"], _ensemble_dim(cfg), np.random.default_rng(seed))
    return build_architecture(arch, seed)


def _moments(obj, t: int):
    """``(moment, haarized moment, local gap)`` for any buildable object."""
    if isinstance(obj, A.LayerEnsemble):
        return A.layer_moment(obj, t), A.layer_moment(A.haarized_layer(obj), t), A.local_gap(obj, t)
    if isinstance(obj, A.FixedArchitecture):
        return (A.block_moment(obj, t), A.block_moment(A.haarized_architecture(obj), t),
                A.block_local_gap(obj, t))
    if isinstance(obj, tuple):
        n, xi, patch, m = obj
        return (A.patchwork_assemble(n, xi, patch, t, m),
                A.patchwork_assemble(n, xi, A.haarized_architecture(patch), t, m),
                A.block_local_gap(patch, t))
    return moment_operator(obj, t), None, A.pair_gap(obj, t)


def _gap_row(cfg, seed, t, obj, arch: dict | None) -> dict:
    m, mh, loc = _moments(obj, t)
    rep = spectral_gap(m)
    row = {"seed": seed, "t": t}
    if arch is not None:
        row.update(family=arch["family"], n_sites=arch["n_sites"], local_dim=arch.get("local_dim", 2))
    row.update(rep.as_row())
    row["gap_haar"] = spectral_gap(mh).gap if mh is not None else None
    row["local_gap"] = loc
    return row


# -- commands -----------------------------------------------------------------


def cmd_gap(cfg: RunConfig, out: Outcome):
    check_dim(_system_dim(cfg, cfg.architecture, cfg.t), cfg.budgets["max_dim"], "moment operator")
    for seed in cfg.seeds:
        out.report.add(_gap_row(cfg, seed, cfg.t, _build(cfg, seed), cfg.architecture))


def _depth_rows(cfg: RunConfig, seed: int, obj) -> tuple[list[dict], bool]:
    t, eps = cfg.t, cfg.eps
    rows, unbounded = [], False
    base = {"seed": seed}

    def attempt(name, fn):
        nonlocal unbounded
        try:
            bound = fn()
        except B.UnboundedDepthError as exc:
            unbounded = True
            rows.append({**base, "formula": name, "depth": math.inf, "status": f"unbounded: {exc}"})
            return None
        rows.append({**base, **bound.as_row(), "status": "ok"})
        return bound

    if isinstance(obj, tuple):
        n, _, patch, _ = obj
        loc = A.block_local_gap(patch, t)
        c0 = cfg.depth.get("c0", 1.0)
        attempt("patchwork", lambda: B.patchwork_depth(n, t, eps, loc, c0))
        return rows, unbounded

    arch = cfg.architecture
    n, d = arch["n_sites"], arch.get("local_dim", 2)
    m, mh, loc = _moments(obj, t)
    gap_h = spectral_gap(mh).gap
    l_h = attempt("haar", lambda: B.haar_depth(gap_h, n, t, d, eps))
    if isinstance(obj, A.LayerEnsemble):
        if l_h is not None:
            attempt("theorem1", lambda: B.theorem1_depth(loc, l_h))
        layers_per_step = 1
    else:
        l = obj.connection_depth
        gaps = [A.local_gap(layer, t) for layer in obj.layers]
        floor = B.brickwork_floor(n, t, d, cfg.budgets["m_max"])
        f = floor.f_complete if obj.is_complete else floor.f_incomplete
        bound = attempt("theorem2", lambda: B.theorem2_depth(B.averaged_local_gap(gaps), l, f, n, t, d, eps))
        if bound is not None:
            rows[-1]["truncated"] = floor.truncated
        layers_per_step = l
    if m.dim <= cfg.budgets["eig_dim"] and not unbounded:
        try:
            steps = B.empirical_formation_depth(m, eps, cfg.budgets["formation_max_depth"])
        except B.FormationBudgetError as exc:
            out_row = {"depth": math.inf, "status": str(exc), "truncated": True}
        else:
            out_row = {"depth": float(steps * layers_per_step), "status": "ok"}
        rows.append({**base, "formula": "empirical", **out_row})
    return rows, unbounded


def cmd_depth(cfg: RunConfig, out: Outcome):
    if cfg.architecture is None:
        raise ConfigError("depth needs an [architecture] section")
    if cfg.architecture["family"] != "patchwork":
        check_dim(_system_dim(cfg, cfg.architecture, cfg.t), cfg.budgets["max_dim"], "moment operator")
    for seed in cfg.seeds:
        obj = _build(cfg, seed)
        rows, unbounded = _depth_rows(cfg, seed, obj)
        out.failed |= unbounded
        out.truncated |= any(r.get("truncated") for r in rows)
        out.report.extend(rows)


def _lemma_alg_grid() -> BoundCheck:
    grid = np.linspace(0.0, 1.0, 11)
    worst, count = None, 0
    for x in grid:
        for y in grid:
            for l in range(7):
                for k in range(7):
                    c = B.lemma_alg_check(float(x), float(y), l, k)
                    count += 1
                    if worst is None or c.margin < worst.margin:
                        worst = c
    return BoundCheck("lemma_alg", worst.lhs, worst.rhs, details={**worst.details, "instances": count})


def _lemma_cs(rng) -> BoundCheck:
    k, dim = 4, 6
    mats = [rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)) for _ in range(k)]
    return B.lemma_cs_check(mats, rng.dirichlet(np.ones(k)))


def _single_layer(cfg, seed, obj):
    if isinstance(obj, A.LayerEnsemble):
        return obj
    arch = {**cfg.architecture, "family": "local1d"}
    return build_architecture(arch, seed)


def _two_layer_block(cfg, seed, obj):
    if isinstance(obj, A.FixedArchitecture):
        return obj
    if cfg.architecture["n_sites"] < 3:
        return None
    return build_architecture({**cfg.architecture, "family": "brickwork"}, seed)


def _run_check(name: str, cfg: RunConfig, seed: int, obj) -> BoundCheck | None:
    t = cfg.t
    if name == "lemma_alg":
        return _lemma_alg_grid()
    if name == "lemma_cs":
        return _lemma_cs(np.random.default_rng([seed, 4]))
    if name == "radius_relation":
        if cfg.ensemble is not None:
            e = build_ensemble(cfg.ensemble["gates"], _ensemble_dim(cfg), np.random.default_rng(seed))
        else:
            d = cfg.architecture.get("local_dim", 2)
            e = build_ensemble(cfg.architecture.get("gates", "haar"), d * d, np.random.default_rng(seed))
        entry = radius_relation_check(e, t, cfg.budgets["eig_dim"])
        return BoundCheck("radius_relation", RELATION_ATOL, entry.residual, slack=0.0,
                          details={"gap": entry.gap, "radius": entry.radius, "t": t})
    if cfg.architecture is None:
        return None
    if name == "prop1":
        return B.prop1_check(_single_layer(cfg, seed, obj), t)
    if name == "convolution":
        m, _, _ = _moments(_single_layer(cfg, seed, obj), t)
        reps = [spectral_gap(m)] * 3
        return convolution_bound_check(reps, m.power(3))
    block = _two_layer_block(cfg, seed, obj)
    if block is None:
        return None
    if name == "brickwork":
        return B.brickwork_check(block, t) if block.connection_depth == 2 else None
    if name == "prop3":
        return B.prop3_check(block, t, cfg.budgets["m_max"])
    if name == "lemma_decomp":
        return B.lemma_decomp_check(block, t)
    raise ConfigError(f"checks: unknown check {name!r}")


def cmd_verify(cfg: RunConfig, out: Outcome):
    if cfg.architecture is not None and cfg.architecture["family"] == "patchwork":
        raise ConfigError("architecture.family: verify does not support patchwork")
    if cfg.architecture is not None:
        check_dim(_system_dim(cfg, cfg.architecture, cfg.t), cfg.budgets["max_dim"], "moment operator")
    for seed in cfg.seeds:
        obj = _build(cfg, seed) if cfg.architecture is not None else None
        for name in cfg.checks:
            check = _run_check(name, cfg, seed, obj)
            if check is None:
                out.report.add({"seed": seed, "check": name, "status": "not applicable"})
                continue
            row = {"seed": seed, **check.as_row(), "status": "ok" if check.passed else "violated"}
            out.failed |= not check.passed
            if check.details.get("truncated"):
                out.truncated = True
            out.report.add(row)


def _sweep_metrics(cfg, seed, value, param):
    """Metric rows for one sweep point; ``None`` signals a budget stop."""
    t = value if param == "t" else cfg.t
    arch = cfg.architecture
    if param == "n_sites":
        arch = {**arch, "n_sites": value}
    budget = cfg.budgets["max_dim"] if arch is not None else cfg.budgets["eig_dim"]
    try:
        check_dim(_system_dim(cfg, arch, t), budget, "moment operator")
    except GuardrailError:
        return None
    obj = _build(cfg, seed, arch)
    if arch is None:
        entry = radius_relation_check(obj, t, cfg.budgets["eig_dim"])
        return [("gap", entry.gap), ("radius", entry.radius), ("relation_residual", entry.residual)]
    row = _gap_row(cfg, seed, t, obj, arch)
    return [("gap", row["gap"]), ("gap_haar", row["gap_haar"]), ("local_gap", row["local_gap"])]


def cmd_sweep(cfg: RunConfig, out: Outcome):
    param = cfg.sweep.get("parameter", "t")
    values = sorted(set(cfg.sweep.get("values", [])))
    if param == "n_sites" and cfg.architecture is None:
        raise ConfigError("sweep.parameter: n_sites needs an [architecture] section")
    out.report.columns = list(SWEEP_COLUMNS)
    for seed in cfg.seeds:
        previous = None
        for value in values:
            metrics = _sweep_metrics(cfg, seed, value, param)
            if metrics is None:
                out.truncated = True
                out.report.add({"parameter": param, "value": value, "seed": seed,
                                "metric": "partial", "result": True})
                break
            for metric, result in metrics:
                out.report.add({"parameter": param, "value": value, "seed": seed,
                                "metric": metric, "result": result})
            gap = metrics[0][1]
            if previous is not None:
                out.report.add({"parameter": param, "value": value, "seed": seed,
                                "metric": "non_increasing", "result": gap <= previous + 1e-8})
            previous = gap
    out.report.rows.sort(key=lambda r: (r["parameter"], r["value"], r["seed"]))


def cmd_frame(cfg: RunConfig, out: Outcome):
    depth = cfg.frame.get("depth", 1)
    samples = cfg.frame.get("samples", cfg.budgets["samples"])
    t_values = cfg.frame.get("t_values", [cfg.t])
    for seed in cfg.seeds:
        obj = _build(cfg, seed)
        if isinstance(obj, tuple):
            raise ConfigError("architecture.family: frame does not support patchwork")
        for t in t_values:
            est = frame_potential(obj, depth, t, samples, seed)
            z = est.z_score
            out.report.add({"seed": seed, "depth": depth, **est.as_row(), "z_score": z,
                            "within_3se": None if z is None else abs(z) <= 3})


COMMANDS = {"gap": cmd_gap, "depth": cmd_depth, "verify": cmd_verify,
            "sweep": cmd_sweep, "frame": cmd_frame}


def run(command: str, cfg: RunConfig, allow_truncation: bool = False) -> tuple[Report, int]:
    """Execute ``command``; returns the report and the exit status."""
    out = Outcome()
    COMMANDS[command](cfg, out)
    out.report.meta.update(
        {"command": command, "version": __version__, "config_sha256": cfg.source_digest,
         "seeds": list(cfg.seeds), "t": cfg.t, "eps": cfg.eps,
         "allow_truncation": allow_truncation, "guardrail_max_dim": max_dim(),
         "truncated": out.truncated, "failed": out.failed}
    )
    for key, value in sorted(cfg.budgets.items()):
        out.report.meta[f"budget_{key}"] = value
    status = EXIT_OK
    if out.failed or (out.truncated and not allow_truncation):
        status = EXIT_FAIL
    return out.report, status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="designgap", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out", help="write the report here instead of stdout")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--seed", type=int, help="override the seeds listed in the config")
    parser.add_argument("--allow-truncation", action="store_true",
                        help="exit 0 even when a budget truncated a minimum or sweep")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.command is not None and cfg.command != args.command:
            raise ConfigError(f"command: config is for {cfg.command!r}, not {args.command!r}")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be nonnegative")
            cfg = cfg.with_seed(args.seed)
        report, status = run(args.command, cfg, args.allow_truncation)
    except (ConfigError, OSError) as exc:
        print(f"designgap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GuardrailError as exc:
        print(f"designgap: budget error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResidualOrthogonalityError as exc:
        print(f"designgap: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = report.render(args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
