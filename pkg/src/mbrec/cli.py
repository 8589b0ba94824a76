"""Command surface: prepare, train, evaluate, ablate, sweep.

Config files are flat JSON mirroring the training and model config
fields (the contrastive weight appears under its JSON name "lambda"),
plus ``data_dir`` (artifacts from prepare) and ``out_dir`` (run
outputs). The MBREC_OUT_DIR environment variable overrides any
configured output directory. Exit codes: 0 success, 1 input data error,
2 configuration/state error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .dataio import InteractionDataset, SplitSpec, parse_interactions, split
from .errors import ConfigError, DataFormatError, NumericalError
from .evaluation import evaluate_split
from .graph import BehaviorGraph, build_graph
from .model import ModelConfig, compute_factors, forward
from .training import (TrainConfig, load_checkpoint, save_checkpoint,
                       train_config_from_dict, train_config_to_dict,
                       train_loop)

OUT_DIR_ENV = "MBREC_OUT_DIR"
_MODEL_KEYS = set(ModelConfig.__dataclass_fields__)
_TRAIN_KEYS = (set(TrainConfig.__dataclass_fields__) - {"lambda_"}) | {"lambda"}
_EXTRA_KEYS = {"data_dir", "out_dir"}


def _resolve_out(requested) -> Path:
    override = os.environ.get(OUT_DIR_ENV)
    path = Path(override) if override else Path(requested)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_raw_config(path, overrides) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        raw[key] = _coerce(value)
    return raw


def _split_config(raw: dict):
    unknown = set(raw) - _MODEL_KEYS - _TRAIN_KEYS - _EXTRA_KEYS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    train_cfg = train_config_from_dict(
        {k: v for k, v in raw.items() if k in _TRAIN_KEYS})
    model_cfg = ModelConfig(**{k: v for k, v in raw.items()
                               if k in _MODEL_KEYS})
    extras = {k: raw[k] for k in _EXTRA_KEYS if k in raw}
    return train_cfg, model_cfg, extras


def _load_artifacts(data_dir):
    data_dir = Path(data_dir)
    dataset_path = data_dir / "dataset.npz"
    graph_path = data_dir / "graph.npz"
    if not dataset_path.exists() or not graph_path.exists():
        raise ConfigError(
            f"prepared artifacts missing under {data_dir} "
            "(expected dataset.npz and graph.npz; run prepare first)")
    return InteractionDataset.load(dataset_path), BehaviorGraph.load(graph_path)


def _manifest(command: str, seed: int, config: dict, fingerprint: str,
              artifacts: dict) -> dict:
    return {"engine_version": __version__, "command": command, "seed": seed,
            "config": config, "dataset_fingerprint": fingerprint,
            "artifacts": artifacts,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}


def cmd_prepare(args) -> int:
    behaviors = [b.strip() for b in args.behaviors.split(",") if b.strip()]
    if not behaviors:
        raise ConfigError("--behaviors must name at least one behavior")
    try:
        with open(args.input) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read {args.input}: {exc}") from exc
    dataset = parse_interactions(lines, behaviors, target_behavior=args.target)
    dataset = split(dataset, SplitSpec(
        min_target_interactions=args.min_interactions, seed=args.seed))
    graph = build_graph(dataset)

    out = _resolve_out(args.out)
    dataset.save(out / "dataset.npz")
    graph.save(out / "graph.npz")
    stats = dataset.manifest_dict()
    stats["num_interactions"] = len(dataset)
    _write_json(out / "stats.json", stats)
    _write_json(out / "manifest.json", _manifest(
        "prepare", args.seed,
        {"input": str(args.input), "behaviors": behaviors,
         "target": args.target, "min_interactions": args.min_interactions},
        dataset.fingerprint(),
        {"dataset": str(out / "dataset.npz"), "graph": str(out / "graph.npz"),
         "stats": str(out / "stats.json")}))
    print(f"prepared {len(dataset)} interactions: "
          f"{stats['M']} users x {stats['N']} items, "
          f"{stats['K']} behaviors -> {out}")
    print(f"fingerprint {dataset.fingerprint()}")
    return 0


def _train_once(dataset, graph, train_cfg, model_cfg, *, disable_cl=False,
                disable_sl=False, history_sink=None, step_sink=None):
    factors = compute_factors(graph, model_cfg)
    return train_loop(dataset, graph, factors, train_cfg, model_cfg,
                      disable_cl=disable_cl, disable_sl=disable_sl,
                      history_sink=history_sink, step_sink=step_sink)


def cmd_train(args) -> int:
    raw = _load_raw_config(args.config, args.override)
    train_cfg, model_cfg, extras = _split_config(raw)
    if "data_dir" not in extras:
        raise ConfigError("config must set data_dir (output of prepare)")
    out = _resolve_out(extras.get("out_dir", "."))
    dataset, graph = _load_artifacts(extras["data_dir"])

    config_snapshot = dict(train_config_to_dict(train_cfg))
    config_snapshot.update(asdict(model_cfg))
    config_snapshot.update(extras)
    _write_json(out / "manifest.json", _manifest(
        "train", train_cfg.seed, config_snapshot, dataset.fingerprint(),
        {"data_dir": str(extras["data_dir"]),
         "checkpoint": str(out / "checkpoint.npz"),
         "history": str(out / "history.jsonl"),
         "steps": str(out / "steps.jsonl")}))

    with open(out / "history.jsonl", "w") as hist_fh, \
            open(out / "steps.jsonl", "w") as step_fh:
        def history_sink(entry):
            # timing is excluded so reruns produce byte-identical logs
            line = {k: v for k, v in entry.items() if k != "elapsed_ms"}
            hist_fh.write(json.dumps(line) + "\n")

        def step_sink(entry):
            step_fh.write(json.dumps(entry) + "\n")

        result = _train_once(dataset, graph, train_cfg, model_cfg,
                             history_sink=history_sink, step_sink=step_sink)

    save_checkpoint(out / "checkpoint.npz", result.best_params,
                    result.optimizer_state, train_cfg, model_cfg,
                    result.rng_state)
    if result.diverged:
        print(f"training diverged: {result.divergence_error}; "
              f"last good checkpoint (epoch {result.best_epoch}) retained",
              file=sys.stderr)
        return 3
    print(f"trained {result.epochs_run} epochs; best val recall@10 "
          f"{result.best_metric:.4f} at epoch {result.best_epoch} -> "
          f"{out / 'checkpoint.npz'}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    params, _, train_cfg, model_cfg, _ = load_checkpoint(ckpt)
    manifest_path = ckpt.parent / "manifest.json"
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        data_dir = manifest["artifacts"]["data_dir"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(
            f"cannot locate data_dir via {manifest_path}: {exc}") from exc
    dataset, graph = _load_artifacts(data_dir)
    factors = compute_factors(graph, model_cfg)
    cache = forward(graph, factors, params, model_cfg, mode="eval")
    k_values = tuple(int(k) for k in args.k.split(","))
    report = evaluate_split(cache, dataset, split=args.split,
                            k_values=k_values, score_view=args.score_view)
    payload = report.to_dict()
    payload["split"] = args.split
    payload["checkpoint"] = str(ckpt)
    out_path = (_resolve_out(ckpt.parent)
                / f"metrics_{args.split}_{args.score_view}.json")
    _write_json(out_path, payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _variant_row(name: str, result, dataset, graph, model_cfg) -> dict:
    factors = compute_factors(graph, model_cfg)
    cache = forward(graph, factors, result.best_params, model_cfg,
                    mode="eval")
    val = evaluate_split(cache, dataset, split="valid", k_values=(10,))
    return {"variant": name, "val_recall@10": val.recall_at[10],
            "val_ndcg@10": val.ndcg_at[10], "best_epoch": result.best_epoch,
            "epochs_run": result.epochs_run}


def _print_table(rows: list[dict]) -> None:
    cols = list(rows[0].keys())
    widths = {c: max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(_fmt(r[c]).ljust(widths[c]) for c in cols))


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def cmd_ablate(args) -> int:
    raw = _load_raw_config(args.config, args.override)
    train_cfg, model_cfg, extras = _split_config(raw)
    if "data_dir" not in extras:
        raise ConfigError("config must set data_dir (output of prepare)")
    dataset, graph = _load_artifacts(extras["data_dir"])
    mode = args.mode
    base = _train_once(dataset, graph, train_cfg, model_cfg)
    rows = [_variant_row("full", base, dataset, graph, model_cfg)]

    if mode == "wo_cl":
        variant = _train_once(dataset, graph, train_cfg, model_cfg,
                              disable_cl=True)
        rows.append(_variant_row("wo_cl", variant, dataset, graph, model_cfg))
    elif mode == "wo_sl":
        variant = _train_once(dataset, graph, train_cfg, model_cfg,
                              disable_sl=True)
        rows.append(_variant_row("wo_sl", variant, dataset, graph, model_cfg))
    elif mode.startswith("drop_behavior:"):
        name = mode.split(":", 1)[1]
        reduced = dataset.drop_behavior(name)
        reduced_graph = build_graph(reduced)
        variant = _train_once(reduced, reduced_graph, train_cfg, model_cfg)
        rows.append(_variant_row(f"drop_behavior:{name}", variant, reduced,
                                 reduced_graph, model_cfg))
    else:
        raise ConfigError(
            f"unknown ablation mode {mode!r}; expected wo_cl, wo_sl, "
            "or drop_behavior:<name>")

    out = _resolve_out(extras.get("out_dir", "."))
    safe_mode = mode.replace(":", "_")
    payload = {"mode": mode, "seed": train_cfg.seed, "rows": rows}
    _write_json(out / f"ablate_{safe_mode}.json", payload)
    _print_table(rows)
    return 0


_SWEEPABLE = {"lambda", "tau", "q"}


def cmd_sweep(args) -> int:
    if args.param not in _SWEEPABLE:
        raise ConfigError(f"unknown sweep param {args.param!r}; "
                          f"expected one of {sorted(_SWEEPABLE)}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep requires a non-empty value list")
    raw = _load_raw_config(args.config, args.override)
    rows = []
    for text in values:
        value = _coerce(text)
        patched = dict(raw)
        if args.param == "q":
            patched["rank"] = value
        else:
            patched[args.param] = value
        try:
            train_cfg, model_cfg, extras = _split_config(patched)
            if "data_dir" not in extras:
                raise ConfigError("config must set data_dir")
            dataset, graph = _load_artifacts(extras["data_dir"])
            result = _train_once(dataset, graph, train_cfg, model_cfg)
            row = _variant_row(f"{args.param}={value}", result, dataset,
                               graph, model_cfg)
            row["value"] = value
            rows.append(row)
        except (ConfigError, DataFormatError, NumericalError) as exc:
            rows.append({"variant": f"{args.param}={value}", "value": value,
                         "error": str(exc)})
    out = _resolve_out(raw.get("out_dir", "."))
    payload = {"param": args.param, "rows": rows}
    _write_json(out / f"sweep_{args.param}.json", payload)
    table_rows = [{k: r.get(k, "") for k in
                   ("variant", "val_recall@10", "val_ndcg@10", "error")}
                  for r in rows]
    _print_table(table_rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbrec",
        description="multi-behavior graph recommender pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse, split, and cache a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--behaviors", required=True,
                   help="comma-separated behavior names, e.g. view,buy")
    p.add_argument("--target", required=True)
    p.add_argument("--min-interactions", type=int, default=5,
                   dest="min_interactions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank and score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="valid", choices=("valid", "test"))
    p.add_argument("--k", default="10,40,80")
    p.add_argument("--score-view", default="svd", choices=("svd", "orig"),
                   dest="score_view")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train base and ablated variants")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True)
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="one seeded run per parameter value")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 0.1,0.2,0.5")
    p.add_argument("--override", action="append", default=[],
                   metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
