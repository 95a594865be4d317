"""Command-line surface: one binary, one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.  All outputs are written atomically (temp file + rename); every
config key is overridable with --section.key=value flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .acquisition import AcquisitionConfig, acquire_rules
from .config import SCHEMA, load_config, write_effective_config
from .ddnnf import model_count
from .errors import ConfigError, DataError, NumericError
from .evaluate import auprc, load_csv, rec_at_k_detail, save_csv, split_dataset
from .experiment import (
    build_knowledge,
    compile_rules,
    encoder_specs_from,
    noise_study,
    pretrain_config_from,
    run_experiment,
    train_config_from,
)
from .gcn import embed_knowledge_set, pretrain_encoder
from .rules import load_rules, render_rule, save_rules
from .synthetic import make_synthetic
from .train import (
    ModelCheckpoint,
    infer,
    load_checkpoint,
    save_checkpoint,
    train,
    write_training_log,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="INI", help="config file (INI sections)")
    group = parser.add_argument_group("config overrides")
    for section, keys in SCHEMA.items():
        for key, spec in keys.items():
            default = spec.default
            if isinstance(default, tuple):
                default = ",".join(str(v) for v in default)
            group.add_argument(
                f"--{section}.{key}",
                dest=f"cfg::{section}.{key}",
                metavar="V",
                default=None,
                help=f"{spec.help} (default: {default})",
            )


def _collect_config(args) -> dict:
    overrides = []
    for key, value in vars(args).items():
        if key.startswith("cfg::") and value is not None:
            overrides.append((key[len("cfg::") :], str(value)))
    return load_config(getattr(args, "config", None), overrides)


def _write_text_atomic(path: str, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _read_values(path: str) -> np.ndarray:
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric value {line!r}") from None
    if not values:
        raise DataError(f"{path}: no values")
    return np.array(values)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    data, clusters = make_synthetic(
        seed=args.seed,
        n_normal=args.n_normal,
        n_direct=args.n_direct,
        n_rule=args.n_rule,
        n_features=args.features,
        noise=args.noise,
    )
    save_csv(data, args.out)
    if args.clusters_out:
        _write_text_atomic(args.clusters_out, "\n".join(clusters) + "\n")
    print(f"wrote {data.n_samples} samples ({int(data.y.sum())} anomalies) to {args.out}")
    return 0


def cmd_acquire_rules(args) -> int:
    data = load_csv(args.data)
    config = AcquisitionConfig(
        n_trees=args.trees,
        max_depth=args.max_depth,
        min_leaf=args.min_leaf,
        feature_subsample=args.feature_subsample,
        feature_indices=tuple(int(i) for i in args.features.split(",") if i.strip())
        if args.features
        else (),
        seed=args.seed,
    )
    rules, provenance = acquire_rules(data.X, data.y, data.feature_names, config)
    save_rules(rules, args.out)
    sidecar = str(args.out) + ".provenance.json"
    _write_text_atomic(
        sidecar,
        json.dumps([p.__dict__ for p in provenance], indent=2) + "\n",
    )
    if not rules:
        print("warning: no all-right anomaly paths found; wrote empty rule file", file=sys.stderr)
    print(f"wrote {len(rules)} rules to {args.out}")
    return 0


def cmd_compile_rules(args) -> int:
    rules = load_rules(args.rules)
    table, graphs = compile_rules(rules)
    payload = {
        "propositions": [
            {"id": p.pid, "subject": p.subject, "predicate": p.predicate, "object": p.obj}
            for p in table.propositions()
        ],
        "rules": [
            {
                "id": rule.rule_id,
                "text": render_rule(rule),
                "ddnnf_nodes": graph.n_nodes(),
                "variables": sorted(graph.varsets[graph.root]),
                "model_count": model_count(graph, len(graph.varsets[graph.root])),
            }
            for rule, graph in zip(rules, graphs)
        ],
    }
    _write_text_atomic(args.out, json.dumps(payload, indent=2) + "\n")
    print(f"compiled {len(rules)} rules -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _collect_config(args)
    rules = load_rules(args.rules)
    if not rules:
        raise DataError(f"{args.rules}: no rules to pretrain on")
    table, graphs = compile_rules(rules)
    pre_cfg = pretrain_config_from(cfg, len(table))
    if args.seed is not None:
        pre_cfg.seed = args.seed
    result = pretrain_encoder(graphs, pre_cfg)
    e_f = embed_knowledge_set(graphs, result.spec, result.params)
    ck = ModelCheckpoint(
        params=dict(result.params.values),
        seed=pre_cfg.seed,
        know_spec=result.spec,
        e_f=e_f,
    )
    save_checkpoint(ck, args.out)
    print(
        f"pretrained knowledge encoder on {len(graphs)} formulae "
        f"(best val accuracy {result.best_val_accuracy:.3f}) -> {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _collect_config(args)
    data = load_csv(args.data)
    knowledge = None
    e_f = know_spec = None
    know_params = None
    rules = []
    if args.rules:
        cfg["rules"]["path"] = args.rules
    if args.encoder:
        pre = load_checkpoint(args.encoder)
        if pre.e_f is None or pre.know_spec is None:
            raise DataError(f"{args.encoder}: not a knowledge-encoder checkpoint")
        rules = load_rules(cfg["rules"]["path"]) if cfg["rules"]["path"] else []
        e_f, know_spec, know_params = pre.e_f, pre.know_spec, pre.params
    elif cfg["rules"]["path"]:
        knowledge = build_knowledge(data, cfg)
        rules = knowledge.rules
        e_f, know_spec, know_params = knowledge.e_f, knowledge.know_spec, knowledge.know_params
    split = split_dataset(data, rules, cfg["eval"]["k_labeled"], cfg["train"]["seed"])
    enc, head = encoder_specs_from(cfg, data.X.shape[1])
    os.makedirs(args.out, exist_ok=True)
    ck, log = train(
        split,
        enc,
        head,
        train_config_from(cfg, cfg["train"]["seed"]),
        e_f=e_f,
        know_spec=know_spec,
        know_params=know_params,
        dump_dir=os.path.join(args.out, "ot_dumps") if args.dump_ot else None,
    )
    save_checkpoint(ck, os.path.join(args.out, "checkpoint.kdal"))
    write_training_log(log, os.path.join(args.out, "training_log.jsonl"))
    write_effective_config(cfg, args.out)
    best = max(r.val_auprc for r in log)
    print(f"trained {len(log)} epochs, best validation AUPRC {best:.4f} -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    data = load_csv(args.data)
    scores = infer(ck, data.X)
    _write_text_atomic(args.out, "".join(f"{float(s)!r}\n" for s in scores))
    print(f"wrote {scores.size} scores to {args.out}")
    return 0


def cmd_eval(args) -> int:
    scores = _read_values(args.scores)
    labels = _read_values(args.labels).astype(np.int64)
    if scores.shape != labels.shape:
        raise DataError(
            f"{scores.size} scores vs {labels.size} labels; counts must match"
        )
    if set(np.unique(labels).tolist()) - {0, 1}:
        raise DataError("labels must be 0/1")
    value, k, tie = rec_at_k_detail(scores, labels)
    print(f"auprc={auprc(scores, labels):.6f} rec@k={value:.6f} k={k} tie_at_cut={tie}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _collect_config(args)
    report = run_experiment(cfg, out_dir=args.out)
    print(report.to_table(), end="")
    return 0


def cmd_noise_study(args) -> int:
    cfg = _collect_config(args)
    report = noise_study(cfg, out_dir=args.out)
    print(report.to_table(), end="")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="kdalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the bundled synthetic dataset")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.add_argument("--n-normal", type=int, default=1500, help="normal samples (default: 1500)")
    p.add_argument("--n-direct", type=int, default=90, help="directly-labeled anomaly cluster size (default: 90)")
    p.add_argument("--n-rule", type=int, default=150, help="rule-covered anomaly cluster size (default: 150)")
    p.add_argument("--features", type=int, default=4, help="feature count (default: 4)")
    p.add_argument("--noise", type=float, default=0.5, help="cluster standard deviation (default: 0.5)")
    p.add_argument("--clusters-out", default=None, help="optional per-row cluster tag file")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("acquire-rules", help="extract all-right anomaly paths from decision trees")
    p.add_argument("--data", required=True, help="labeled dataset CSV")
    p.add_argument("--out", required=True, help="output rule file (.rules or .json)")
    p.add_argument("--trees", type=int, default=5, help="bootstrap tree count (default: 5)")
    p.add_argument("--max-depth", type=int, default=4, help="maximum tree depth (default: 4)")
    p.add_argument("--min-leaf", type=int, default=1, help="minimum samples per leaf (default: 1)")
    p.add_argument("--feature-subsample", type=int, default=0, help="random feature subset per tree, 0 = all (default: 0)")
    p.add_argument("--features", default="", help="comma-separated feature index allowlist")
    p.add_argument("--seed", type=int, default=0, help="acquisition seed (default: 0)")
    p.set_defaults(func=cmd_acquire_rules)

    p = sub.add_parser("compile-rules", help="compile rules to d-DNNF and report structure")
    p.add_argument("--rules", required=True, help="rule file")
    p.add_argument("--out", required=True, help="output JSON artifact")
    p.set_defaults(func=cmd_compile_rules)

    p = sub.add_parser("pretrain", help="pretrain the knowledge encoder on a rule file")
    p.add_argument("--rules", required=True, help="rule file")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--seed", type=int, default=None, help="override [know_encoder] seed")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the detector (with or without knowledge)")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--rules", default=None, help="rule file (enables the OT loss)")
    p.add_argument("--encoder", default=None, help="pretrained knowledge-encoder checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-ot", action="store_true", help="dump per-batch transport plans")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="score a dataset with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="trained checkpoint")
    p.add_argument("--data", required=True, help="dataset CSV (labels ignored)")
    p.add_argument("--out", required=True, help="output score file, one per line")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="compute AUPRC and Rec@K from score/label files")
    p.add_argument("--scores", required=True, help="score file, one float per line")
    p.add_argument("--labels", required=True, help="label file, one 0/1 per line")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the full multi-seed protocol")
    p.add_argument("--out", default=None, help="output directory for reports")
    _add_config_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("noise-study", help="run the noisy-rule robustness study")
    p.add_argument("--out", default=None, help="output directory for reports")
    _add_config_flags(p)
    p.set_defaults(func=cmd_noise_study)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
