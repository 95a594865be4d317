"""Run configuration: INI file + --section.key overrides, schema-validated.

Unknown keys are rejected (all offenders reported at once) and every key can
be overridden on the command line; the effective configuration is echoed
into each output directory.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from typing import Any

from .errors import ConfigError


@dataclass(frozen=True)
class Key:
    kind: str  # int | float | bool | str | ints | floats
    default: Any
    help: str


SCHEMA: dict[str, dict[str, Key]] = {
    "data": {
        "path": Key("str", "", "dataset CSV (header row, numeric features, 'label' column)"),
    },
    "rules": {
        "path": Key("str", "", "rule file (.rules DSL or .json); empty = acquire from data"),
        "trees": Key("int", 5, "number of bootstrap decision trees"),
        "max_depth": Key("int", 4, "maximum tree depth"),
        "min_leaf": Key("int", 1, "minimum samples per leaf"),
        "feature_subsample": Key("int", 0, "random feature subset size per tree (0 = all)"),
        "feature_indices": Key("ints", (), "explicit feature allowlist for tree splits"),
        "seed": Key("int", 0, "acquisition / noise-injection seed"),
    },
    "know_encoder": {
        "layers": Key("int", 2, "GCN layer count"),
        "hidden": Key("int", 16, "GCN hidden width"),
        "embed": Key("int", 16, "knowledge embedding width h"),
        "var_capacity": Key("int", 24, "max proposition id encodable (auto-grown to fit)"),
        "steps": Key("int", 300, "pretraining gradient steps"),
        "learning_rate": Key("float", 0.05, "pretraining step size"),
        "margin": Key("float", 1.0, "triplet margin"),
        "and_reg": Key("float", 0.1, "AND-node structural regularizer weight"),
        "or_reg": Key("float", 0.1, "OR-node spread regularizer weight"),
        "val_pairs": Key("int", 4, "held-out triples per formula"),
        "eval_every": Key("int", 20, "steps between validation passes"),
        "seed": Key("int", 0, "pretraining seed"),
    },
    "model": {
        "kind": Key("str", "mlp", "encoder kind: mlp | resnet"),
        "hidden": Key("ints", (32, 16), "hidden widths (mlp) / block width (resnet)"),
        "blocks": Key("int", 2, "residual block count (resnet)"),
        "main_dim": Key("int", 32, "residual stream width (resnet)"),
        "dropout_first": Key("float", 0.0, "dropout after block activation"),
        "dropout_second": Key("float", 0.0, "dropout after second block linear"),
        "head_hidden": Key("ints", (), "hidden widths of the scoring head"),
        "transform": Key("str", "sigmoid", "head output: sigmoid | raw"),
    },
    "ot": {
        "metric": Key("str", "sqeuclidean", "cost metric: sqeuclidean | cosine"),
        "epsilon_scale": Key("float", 0.1, "epsilon as a fraction of mean batch cost"),
        "max_iter": Key("int", 500, "Sinkhorn iteration cap"),
        "tol": Key("float", 1e-6, "marginal residual tolerance"),
        "anomaly_mass_boost": Key("float", 1.0, "marginal mass multiplier for labeled anomalies"),
        "unrolled": Key("bool", False, "differentiate through unrolled Sinkhorn"),
        "unrolled_iters": Key("int", 50, "iterations in unrolled mode"),
    },
    "train": {
        "rule_weight": Key("float", 1.0, "lambda: weight of the OT loss term"),
        "lambda_grid": Key("floats", (), "candidate lambdas tuned on validation AUPRC"),
        "epochs": Key("int", 30, "training epochs"),
        "batch_size": Key("int", 128, "batch size (labeled anomalies always included)"),
        "learning_rate": Key("float", 0.01, "Adam learning rate"),
        "loss": Key("str", "bce", "prediction loss: bce | deviation"),
        "patience": Key("int", 10, "early-stopping patience in epochs"),
        "ot_enabled": Key("bool", True, "compute the OT loss term at all"),
        "standardize": Key("bool", True, "standardize features on train statistics"),
        "seed": Key("int", 0, "training seed"),
    },
    "eval": {
        "seeds": Key("ints", (0,), "experiment seeds (one full run each)"),
        "k_labeled": Key("int", 10, "labeled anomalies retained in training"),
        "noise_ratios": Key("floats", (0.0, 0.05, 0.1, 0.2), "noisy-rule ratios for the noise study"),
        "include_baseline": Key("bool", True, "also run the lambda=0 baseline per seed"),
    },
}


def default_config() -> dict[str, dict[str, Any]]:
    return {s: {k: spec.default for k, spec in keys.items()} for s, keys in SCHEMA.items()}


def _parse_value(section: str, key: str, raw: str) -> Any:
    spec = SCHEMA[section][key]
    try:
        if spec.kind == "int":
            return int(raw)
        if spec.kind == "float":
            return float(raw)
        if spec.kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if spec.kind == "ints":
            raw = raw.strip()
            return tuple(int(p) for p in raw.split(",") if p.strip()) if raw else ()
        if spec.kind == "floats":
            raw = raw.strip()
            return tuple(float(p) for p in raw.split(",") if p.strip()) if raw else ()
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def load_config(path: str | None = None, overrides: list[tuple[str, str]] | None = None):
    """Effective config from defaults, an optional INI file, and overrides.

    ``overrides`` holds ("section.key", raw value) pairs from the CLI.  Every
    unknown section/key across file and overrides is reported in one error.
    """
    cfg = default_config()
    problems: list[str] = []
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                problems.append(f"unknown section [{section}]")
                continue
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    problems.append(f"unknown key [{section}] {key}")
                    continue
                try:
                    cfg[section][key] = _parse_value(section, key, raw)
                except ConfigError as exc:
                    problems.append(str(exc))
    for dotted, raw in overrides or []:
        if "." not in dotted:
            problems.append(f"override {dotted!r} is not of the form section.key")
            continue
        section, key = dotted.split(".", 1)
        if section not in SCHEMA or key not in SCHEMA[section]:
            problems.append(f"unknown key [{section}] {key}")
            continue
        try:
            cfg[section][key] = _parse_value(section, key, raw)
        except ConfigError as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


def render_config(cfg: dict[str, dict[str, Any]]) -> str:
    lines = []
    for section, keys in cfg.items():
        lines.append(f"[{section}]")
        for key, value in keys.items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def write_effective_config(cfg, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "effective_config.ini")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(render_config(cfg))
    os.replace(tmp, path)
