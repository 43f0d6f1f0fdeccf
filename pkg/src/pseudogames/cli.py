"""End-to-end experiment runner and CLI.

``pseudogames run`` executes the full protocol on one economy: generate,
train the requested methods, evaluate the three metrics, normalize against
the random-policy baseline, and emit CSV + SVG + manifest artifacts. The
remaining subcommands expose the individual stages.

Artifacts are byte-deterministic for a fixed config and seed: no wall-clock
data enters them (training traces, which carry wall_ms, are written only on
request via ``train --trace-out``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_params, save_params
from .config import (
    ExperimentConfig,
    apply_preset,
    config_to_text,
    load_config,
    parse_config_text,
)
from .economy import (
    EconomyConfig,
    EconomyScheme,
    build_pseudo_game,
    load_economy,
    sample_random_economy,
    save_economy,
)
from .game import SpecificationError
from .npm import (
    EvalProtocol,
    MetricsRecord,
    NpmConfig,
    ResidualConfig,
    ValueFitConfig,
    ValueHeads,
    evaluate_policy,
    normalized_metrics,
    random_baseline,
    train_npm,
)
from .rollout import RolloutConfig, backend_choice
from .solver import AdversaryEvalConfig, TtsgdaConfig, best_iterate, ttsgda
from .svgchart import write_bar_chart

METRIC_FIELDS = ["run_id", "method", "economy_id", "metric", "raw", "normalized", "std_err"]


def build_hash() -> str:
    """Hash of the installed package sources; identifies the build in
    manifests so any emitted number can be traced to exact code."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.py")) + sorted(root.rglob("*.pyx")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def economy_config(cfg: ExperimentConfig) -> EconomyConfig:
    return EconomyConfig(
        n_consumers=cfg.n_consumers,
        m_commodities=cfg.m_commodities,
        k_assets=cfg.k_assets,
        n_world_states=cfg.n_world_states,
        utility=cfg.utility,
        transition=cfg.transition,
        discount=cfg.discount,
        horizon=cfg.horizon,
        leontief_eps=cfg.leontief_eps,
        init_mode=cfg.init_mode,
        economy_id=cfg.economy_id,
    )


def rollout_config(cfg: ExperimentConfig) -> RolloutConfig:
    return RolloutConfig(cfg.horizon, cfg.n_trajectories, cfg.rollout_mode)


def adversary_config(cfg: ExperimentConfig) -> AdversaryEvalConfig:
    return AdversaryEvalConfig(
        k_adv=cfg.eval_k_adv,
        eta=cfg.eval_eta,
        rollout=RolloutConfig(cfg.horizon, cfg.eval_trajectories, cfg.rollout_mode),
    )


def eval_protocol(cfg: ExperimentConfig) -> EvalProtocol:
    return EvalProtocol(
        adversary=adversary_config(cfg),
        residuals=ResidualConfig(cfg.metric_states, cfg.metric_shocks),
        value_fit=ValueFitConfig(
            n_states=cfg.value_fit_states,
            n_iters=cfg.value_fit_iters,
            lr=cfg.value_fit_lr,
            rollout=RolloutConfig(cfg.horizon, 1, cfg.rollout_mode),
        ),
        value_hidden=cfg.value_hidden_tuple,
    )


def solver_config(cfg: ExperimentConfig) -> TtsgdaConfig:
    return TtsgdaConfig(
        eta_theta=cfg.gapnet_eta_theta,
        eta_phi=cfg.gapnet_eta_phi if cfg.gapnet_eta_phi > 0 else None,
        n_iters=cfg.gapnet_iters,
        rollout=rollout_config(cfg),
        eval_every=cfg.gapnet_eval_every,
        eval=adversary_config(cfg),
        backend=None if cfg.backend == "auto" else cfg.backend,
    )


def npm_config(cfg: ExperimentConfig) -> NpmConfig:
    return NpmConfig(
        eta=cfg.npm_eta,
        n_iters=cfg.npm_iters,
        residuals=ResidualConfig(cfg.npm_states, cfg.npm_shocks),
        value_hidden=cfg.value_hidden_tuple,
        eval_every=cfg.npm_eval_every,
        eval=adversary_config(cfg),
    )


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def record_rows(run_id, rec: MetricsRecord):
    rows = []
    for metric in sorted(rec.raw):
        rows.append({
            "run_id": run_id,
            "method": rec.method,
            "economy_id": rec.economy_id,
            "metric": metric,
            "raw": repr(rec.raw[metric]),
            "normalized": repr(rec.normalized[metric]) if rec.normalized else "",
            "std_err": repr(rec.std_err.get(metric, 0.0)),
        })
    return rows


def run_experiment(cfg: ExperimentConfig, quiet=False) -> Path:
    """Full protocol for one economy; returns the artifact directory."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = f"{cfg.economy_id}-seed{cfg.seed}"

    def say(msg):
        if not quiet:
            print(msg, flush=True)

    econ = sample_random_economy(economy_config(cfg), np.random.default_rng(cfg.economy_seed))
    spec = build_pseudo_game(econ)
    scheme = EconomyScheme(econ)
    save_economy(econ, out / "economy.json")
    backend = backend_choice(spec, scheme, None if cfg.backend == "auto" else cfg.backend)

    rng = np.random.default_rng(cfg.seed)
    rng_gapnet, rng_npm, rng_eval, rng_baseline = rng.spawn(4)
    protocol = eval_protocol(cfg)
    records = []

    if cfg.method in ("gapnet", "both"):
        say(f"[{run_id}] training gapnet ({cfg.gapnet_iters} iters)")
        trace = ttsgda(spec, scheme, solver_config(cfg), rng_gapnet)
        theta_star = best_iterate(trace).theta
        save_params(out / "gapnet_theta.bin", theta_star, scheme.descriptor())
        records.append(evaluate_policy(
            spec, scheme, theta_star, protocol, rng_eval.spawn(1)[0],
            method="gapnet", backend=None if cfg.backend == "auto" else cfg.backend,
        ))
    if cfg.method in ("npm", "both"):
        say(f"[{run_id}] training npm ({cfg.npm_iters} iters)")
        theta_npm, psi_npm, _ = train_npm(spec, scheme, npm_config(cfg), rng_npm)
        save_params(out / "npm_theta.bin", theta_npm, scheme.descriptor())
        heads = ValueHeads(spec.n_players, scheme.n_feat, cfg.value_hidden_tuple)
        save_params(out / "npm_psi.bin", psi_npm,
                    {"heads": [heads.n_players, heads.n_feat, list(heads.hidden)]})
        records.append(evaluate_policy(
            spec, scheme, theta_npm, protocol, rng_eval.spawn(1)[0],
            method="npm", psi=psi_npm,
            backend=None if cfg.backend == "auto" else cfg.backend,
        ))

    say(f"[{run_id}] random baseline ({cfg.baseline_policies} policies)")
    baseline = random_baseline(
        spec, scheme, protocol, rng_baseline, n_policies=cfg.baseline_policies,
        backend=None if cfg.backend == "auto" else cfg.backend,
    )

    rows = []
    normalized = {}
    for rec in records:
        norm = normalized_metrics(rec, baseline)
        normalized[rec.method] = norm
        rows.extend(record_rows(run_id, norm))
    for rec in baseline:
        rows.extend(record_rows(run_id, normalized_metrics(rec, baseline)))
    write_metrics_csv(out / "metrics.csv", rows)

    for metric in ("fov", "bellman", "exploitability"):
        series = {}
        for method, rec in normalized.items():
            series[method] = [rec.normalized[metric]]
        series["random"] = [1.0]
        write_bar_chart(
            out / f"chart_{metric}.svg",
            f"{metric} (normalized), {cfg.economy_id}",
            [cfg.economy_id], series, unit_line=1.0,
        )

    manifest = {
        "run_id": run_id,
        "schema_version": cfg.schema_version,
        "config": {k: getattr(cfg, k) for k in sorted(vars(cfg))},
        "package_version": __version__,
        "build_hash": build_hash(),
        "backend": backend,
        "artifacts": sorted(p.name for p in out.iterdir() if p.is_file()),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    say(f"[{run_id}] artifacts in {out}")
    return out


# ---------------------------------------------------------------------------
# subcommands


def _resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    if getattr(args, "preset", None):
        cfg = apply_preset(cfg, args.preset)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = str(args.out)
    if getattr(args, "method", None):
        overrides["method"] = args.method
    if getattr(args, "utility", None):
        overrides["utility"] = args.utility
    if getattr(args, "transition", None):
        overrides["transition"] = args.transition
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def cmd_run(args):
    run_experiment(_resolve_config(args), quiet=args.quiet)
    return 0


def cmd_gen_economy(args):
    cfg = _resolve_config(args)
    seed = args.seed if args.seed is not None else cfg.economy_seed
    econ = sample_random_economy(
        replace(economy_config(cfg), economy_id=args.economy_id or cfg.economy_id),
        np.random.default_rng(seed),
    )
    save_economy(econ, args.out)
    print(f"economy written to {args.out}")
    return 0


def cmd_train(args):
    cfg = _resolve_config(args)
    econ = load_economy(args.economy) if args.economy else sample_random_economy(
        economy_config(cfg), np.random.default_rng(cfg.economy_seed)
    )
    spec = build_pseudo_game(econ)
    scheme = EconomyScheme(econ)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method = cfg.method if cfg.method != "both" else "gapnet"
    if args.grid:
        rates = [float(v) for v in args.grid.split(",")]
        rows = []
        for lr in rates:
            rng = np.random.default_rng(cfg.seed)
            if method == "gapnet":
                scfg = replace(solver_config(cfg), eta_theta=lr, eta_phi=None)
                trace = ttsgda(spec, scheme, scfg, rng.spawn(1)[0])
                rows.append((lr, best_iterate(trace).exploitability))
            else:
                ncfg = replace(npm_config(cfg), eta=lr)
                _, _, trace = train_npm(spec, scheme, ncfg, rng.spawn(1)[0])
                rows.append((lr, best_iterate(trace).exploitability))
        with open(out / f"grid_{method}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["learning_rate", "best_exploitability"])
            for lr, ex in rows:
                w.writerow([repr(lr), repr(ex)])
        print(f"grid results in {out / f'grid_{method}.csv'}")
        return 0
    rng = np.random.default_rng(cfg.seed)
    if method == "gapnet":
        trace = ttsgda(spec, scheme, solver_config(cfg), rng)
        theta = best_iterate(trace).theta
        save_params(out / "gapnet_theta.bin", theta, scheme.descriptor())
    else:
        theta, psi, trace = train_npm(spec, scheme, npm_config(cfg), rng)
        save_params(out / "npm_theta.bin", theta, scheme.descriptor())
        heads = ValueHeads(spec.n_players, scheme.n_feat, cfg.value_hidden_tuple)
        save_params(out / "npm_psi.bin", psi,
                    {"heads": [heads.n_players, heads.n_feat, list(heads.hidden)]})
    if args.trace_out:
        trace.to_csv(args.trace_out)
    print(f"checkpoints in {out}")
    return 0


def cmd_eval(args):
    cfg = _resolve_config(args)
    econ = load_economy(args.economy)
    spec = build_pseudo_game(econ)
    scheme = EconomyScheme(econ)
    theta = load_params(args.checkpoint, scheme.descriptor())
    psi = load_params(args.psi) if args.psi else None
    rec = evaluate_policy(
        spec, scheme, theta, eval_protocol(cfg), np.random.default_rng(cfg.seed),
        method=args.method_name, psi=psi,
    )
    if args.baseline:
        baseline = _read_baseline_records(args.baseline)
        rec = normalized_metrics(rec, baseline)
    write_metrics_csv(args.out, record_rows(f"{econ.economy_id}-seed{cfg.seed}", rec))
    print(f"metrics in {args.out}")
    return 0


def cmd_baseline_random(args):
    cfg = _resolve_config(args)
    econ = load_economy(args.economy) if args.economy else sample_random_economy(
        economy_config(cfg), np.random.default_rng(cfg.economy_seed)
    )
    spec = build_pseudo_game(econ)
    scheme = EconomyScheme(econ)
    n = args.n if args.n is not None else cfg.baseline_policies
    records = random_baseline(
        spec, scheme, eval_protocol(cfg), np.random.default_rng(cfg.seed), n_policies=n,
    )
    rows = []
    for rec in records:
        rows.extend(record_rows(f"{econ.economy_id}-seed{cfg.seed}",
                                normalized_metrics(rec, records)))
    write_metrics_csv(args.out, rows)
    print(f"{n} baseline policies in {args.out}")
    return 0


def _read_baseline_records(path):
    # one record per policy: its metric rows are consecutive, so a repeated
    # metric name starts the next policy
    records = []
    current = None
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if row["method"] != "random":
                continue
            metric = row["metric"]
            if current is None or metric in current.raw:
                current = MetricsRecord("random", row["economy_id"], {}, {})
                records.append(current)
            current.raw[metric] = float(row["raw"])
            current.std_err[metric] = float(row["std_err"])
    if not records:
        raise SpecificationError(f"{path} holds no random-baseline rows")
    return records


def cmd_report(args):
    run_dirs = [Path(d) for d in args.runs]
    table = {}
    methods = set()
    for d in run_dirs:
        path = d / "metrics.csv"
        if not path.exists():
            raise SpecificationError(f"{d} has no metrics.csv")
        with open(path) as fh:
            for row in csv.DictReader(fh):
                if row["method"] == "random" or not row["normalized"]:
                    continue
                methods.add(row["method"])
                table[(row["run_id"], row["method"], row["metric"])] = float(row["normalized"])
    run_ids = sorted({k[0] for k in table})
    methods = sorted(methods) + ["random"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "metric"] + methods)
        for rid in run_ids:
            for metric in ("fov", "bellman", "exploitability"):
                row = [rid, metric]
                for method in methods:
                    if method == "random":
                        row.append(repr(1.0))
                    else:
                        val = table.get((rid, method, metric))
                        row.append("" if val is None else repr(val))
                w.writerow(row)
    for metric in ("fov", "bellman", "exploitability"):
        series = {}
        for method in methods:
            if method == "random":
                series[method] = [1.0] * len(run_ids)
            else:
                series[method] = [table.get((rid, method, metric), float("nan"))
                                  for rid in run_ids]
        write_bar_chart(out / f"report_{metric}.svg",
                        f"{metric} (normalized)", run_ids, series, unit_line=1.0)
    print(f"report in {out}")
    return 0


def _add_config_args(p, with_method=True):
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--preset", choices=["desk", "paper-det", "paper-stoch"],
                   help="protocol preset (applied after the config file)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", help="output directory/file override")
    p.add_argument("--utility", choices=["linear", "cobb-douglas", "leontief"])
    p.add_argument("--transition", choices=["deterministic", "stochastic"])
    if with_method:
        p.add_argument("--method", choices=["gapnet", "npm", "both"])


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pseudogames",
        description="Markov pseudo-games: equilibrium training, evaluation, reports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full experiment: train, evaluate, normalize, chart")
    _add_config_args(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("gen-economy", help="sample and save an economy instance")
    _add_config_args(p, with_method=False)
    p.add_argument("--economy-id")
    p.set_defaults(fn=cmd_gen_economy, out_required=True)

    p = sub.add_parser("train", help="train one method, save checkpoints")
    _add_config_args(p)
    p.add_argument("--economy", help="economy JSON (default: generate from config)")
    p.add_argument("--trace-out", help="write the training trace CSV here")
    p.add_argument("--grid", help="comma-separated learning rates to sweep")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p, with_method=False)
    p.add_argument("--economy", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--psi", help="value-head checkpoint (projection-method output)")
    p.add_argument("--method-name", default="gapnet")
    p.add_argument("--baseline", help="metrics CSV with random rows for normalization")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("baseline-random", help="evaluate random policy profiles")
    _add_config_args(p, with_method=False)
    p.add_argument("--economy")
    p.add_argument("--n", type=int)
    p.set_defaults(fn=cmd_baseline_random)

    p = sub.add_parser("report", help="aggregate run directories into one table")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    if getattr(args, "out_required", False) and not args.out:
        parser.error("--out is required")
    try:
        return args.fn(args)
    except SpecificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
