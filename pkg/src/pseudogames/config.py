"""Experiment configuration: a line-based ``key = value`` text format with
an explicit schema version and a closed key set.

Unknown keys are hard errors: silent default drift is the main
reproducibility hazard, so anything unrecognized aborts with the offending
key path. Presets bundle the desk-scale defaults and the two paper-scale
protocols; per-utility learning rates follow the published tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .game import SpecificationError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    method: str = "both"            # gapnet | npm | both
    backend: str = "auto"           # auto | compiled | reference
    out_dir: str = "runs/experiment"

    economy_seed: int = 1
    economy_id: str = "desk"
    n_consumers: int = 3
    m_commodities: int = 3
    k_assets: int = 1
    n_world_states: int = 2
    utility: str = "linear"
    transition: str = "deterministic"
    discount: float = 0.9
    init_mode: str = "dirac"
    leontief_eps: float = 0.05

    horizon: int = 10
    n_trajectories: int = 16
    rollout_mode: str = "fixed-horizon"

    gapnet_eta_theta: float = 2e-3
    gapnet_eta_phi: float = 0.0     # 0 -> two-time-scale default (10x)
    gapnet_iters: int = 1500
    gapnet_eval_every: int = 250

    npm_eta: float = 1e-3
    npm_iters: int = 1000
    npm_states: int = 32
    npm_shocks: int = 2
    npm_value_hidden: str = "16"
    npm_eval_every: int = 250

    eval_k_adv: int = 200
    eval_eta: float = 5e-3
    eval_trajectories: int = 16

    value_fit_states: int = 48
    value_fit_iters: int = 200
    value_fit_lr: float = 0.05
    metric_states: int = 128
    metric_shocks: int = 4

    baseline_policies: int = 50

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise SpecificationError(
                f"config schema_version {self.schema_version} unsupported "
                f"(expected {SCHEMA_VERSION})"
            )
        if self.method not in ("gapnet", "npm", "both"):
            raise SpecificationError(f"method must be gapnet|npm|both, got {self.method!r}")
        for key in ("gapnet_eta_theta", "npm_eta", "eval_eta", "discount",
                    "value_fit_lr"):
            if getattr(self, key) <= 0:
                raise SpecificationError(f"{key} must be positive")
        for key in ("gapnet_iters", "npm_iters", "eval_k_adv", "horizon",
                    "n_trajectories", "baseline_policies", "seed"):
            if getattr(self, key) < 0:
                raise SpecificationError(f"{key} must be nonnegative")
        return self

    @property
    def value_hidden_tuple(self):
        text = self.npm_value_hidden.strip()
        if not text:
            return ()
        try:
            return tuple(int(v) for v in text.split(","))
        except ValueError as exc:
            raise SpecificationError(
                f"npm_value_hidden must be comma-separated ints, got {text!r}"
            ) from exc


_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


# appendix protocols: 2000 training episodes, 1000 adversary-ascent episodes,
# 50-policy normalization; per-family learning rates from the tables
_PAPER_GAPNET_LR = {
    ("paper-det", "linear"): (1e-5, 1e-5),
    ("paper-det", "cobb-douglas"): (1e-5, 1e-5),
    ("paper-det", "leontief"): (1e-5, 1e-5),
    ("paper-stoch", "linear"): (1e-5, 1e-5),
    ("paper-stoch", "cobb-douglas"): (2.5e-5, 2.5e-5),
    ("paper-stoch", "leontief"): (5e-5, 5e-5),
}
_PAPER_NPM_LR = {
    ("paper-det", "linear"): 1e-4,
    ("paper-det", "cobb-douglas"): 2.5e-5,
    ("paper-det", "leontief"): 1e-4,
    ("paper-stoch", "linear"): 5e-5,
    ("paper-stoch", "cobb-douglas"): 2.5e-5,
    ("paper-stoch", "leontief"): 5e-4,
}
_PAPER_EVAL_LR = {
    ("paper-det", "linear"): 5e-5,
    ("paper-det", "cobb-douglas"): 1e-4,
    ("paper-det", "leontief"): 1e-4,
    ("paper-stoch", "linear"): 7.5e-4,
    ("paper-stoch", "cobb-douglas"): 1e-4,
    ("paper-stoch", "leontief"): 1e-4,
}


def apply_preset(cfg: ExperimentConfig, preset: str) -> ExperimentConfig:
    if preset == "desk":
        return cfg
    if preset not in ("paper-det", "paper-stoch"):
        raise SpecificationError(f"unknown preset {preset!r}")
    transition = "deterministic" if preset == "paper-det" else "stochastic"
    eta_t, eta_p = _PAPER_GAPNET_LR[(preset, cfg.utility)]
    return replace(
        cfg,
        n_consumers=10, m_commodities=10, k_assets=1, n_world_states=5,
        transition=transition, horizon=30,
        gapnet_eta_theta=eta_t, gapnet_eta_phi=eta_p, gapnet_iters=2000,
        npm_eta=_PAPER_NPM_LR[(preset, cfg.utility)], npm_iters=2000,
        npm_states=10, eval_k_adv=1000,
        eval_eta=_PAPER_EVAL_LR[(preset, cfg.utility)],
        baseline_policies=50,
    )


def _parse_value(key, text):
    ftype = _FIELDS[key]
    text = text.strip()
    if ftype in ("int", int):
        return int(text)
    if ftype in ("float", float):
        return float(text)
    return text


def parse_config_text(text, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    seen = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecificationError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise SpecificationError(f"config line {lineno}: unknown key {key!r}")
        if key in seen:
            raise SpecificationError(
                f"config line {lineno}: duplicate key {key!r} (first at line {seen[key]})"
            )
        seen[key] = lineno
        try:
            cfg = replace(cfg, **{key: _parse_value(key, value)})
        except ValueError as exc:
            raise SpecificationError(
                f"config line {lineno}: bad value for {key!r}: {exc}"
            ) from exc
    return cfg.validate()


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), base=base)


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(ExperimentConfig)]
    return "\n".join(lines) + "\n"
