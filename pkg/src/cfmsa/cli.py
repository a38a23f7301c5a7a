"""Command-line pipeline: synth, train, eval, infer, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
Every artifact embeds the fully resolved run configuration; the optional
timestamp field is suppressed with --no-timestamp so reruns are
byte-identical. All randomness flows from --seed. CFMSA_THREADS caps
evaluation parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .counterfactual import ALL_MODES, InferenceMode, mode_scores
from .data import (
    Dataset,
    FeatureFormatError,
    SyntheticConfig,
    gen_synthetic,
    load_features,
    save_features,
)
from .evaluation import configured_threads, evaluate
from .gradcheck import format_results, run_gradient_checks
from .model import load_checkpoint, sample_bundle, save_checkpoint
from .numerics import softmax
from .trainer import TrainConfig, train

__all__ = ["main", "build_parser", "UsageError"]


class UsageError(Exception):
    """Bad flags, bad config values, or missing inputs; exits with code 2."""


def _parse_modes(raw: str) -> list[InferenceMode]:
    if raw.strip() == "all":
        return list(ALL_MODES)
    out = []
    for token in raw.split(","):
        token = token.strip()
        try:
            out.append(InferenceMode(token))
        except ValueError:
            valid = ",".join(m.value for m in ALL_MODES)
            raise UsageError(f"unknown mode {token!r}; expected all or any of {valid}")
    if not out:
        raise UsageError("at least one mode is required")
    return out


def _parse_floats(raw: str, field: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in raw.split(","))
    except ValueError:
        raise UsageError(f"{field} must be a comma-separated list of numbers")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"config file is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    return doc


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags, with unknown keys rejected."""
    options = dict(defaults)
    file_values = _load_config_file(getattr(args, "config", None))
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    options.update(file_values)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            options[key] = value
    return options


def _run_config(command: str, options: dict, no_timestamp: bool) -> dict:
    doc = {"command": command, "version": __version__, "options": options}
    if not no_timestamp:
        doc["generated_at"] = datetime.now(timezone.utc).isoformat()
    return doc


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8", newline="\n")


def _out_dir(options: dict) -> Path:
    if not options.get("out"):
        raise UsageError("--out is required")
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path_value, what: str) -> Dataset:
    if not path_value:
        raise UsageError(f"--{what} is required")
    path = Path(path_value)
    if not path.exists():
        raise UsageError(f"{what} file not found: {path}")
    try:
        return load_features(path)
    except FeatureFormatError as e:
        raise UsageError(f"{path}: {e}")


SYNTH_DEFAULTS = {
    "out": None,
    "seed": 0,
    "n_train": 3000,
    "n_val": 500,
    "n_test": 1000,
    "d_t": 16,
    "d_i": 16,
    "rho": 0.9,
    "bias_dims": 4,
    "signal_scale": 1.0,
    "noise_scale": 0.5,
    "flip_at_test": True,
    "priors": None,
}


def cmd_synth(args: argparse.Namespace) -> int:
    options = _resolve(args, SYNTH_DEFAULTS)
    out = _out_dir(options)
    kwargs = dict(
        n_train=options["n_train"],
        n_val=options["n_val"],
        n_test=options["n_test"],
        d_t=options["d_t"],
        d_i=options["d_i"],
        signal_scale=options["signal_scale"],
        noise_scale=options["noise_scale"],
        bias_dims=options["bias_dims"],
        bias_strength=options["rho"],
        bias_flip_at_test=bool(options["flip_at_test"]),
        seed=options["seed"],
    )
    if options["priors"] is not None:
        priors = options["priors"]
        if isinstance(priors, str):
            priors = _parse_floats(priors, "priors")
        kwargs["class_priors"] = tuple(float(p) for p in priors)
    try:
        cfg = SyntheticConfig(**kwargs)
        cfg.validate()
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid synthetic config: {e}")
    train_set, val_set, test_set = gen_synthetic(cfg)
    for name, ds in (("train", train_set), ("val", val_set), ("test", test_set)):
        save_features(ds, out / f"{name}.jsonl")
    options_echo = dict(options)
    options_echo["priors"] = list(cfg.class_priors)
    _write_json(
        out / "run_config.json",
        _run_config("synth", options_echo, args.no_timestamp),
    )
    print(f"wrote train/val/test feature files to {out}")
    return 0


TRAIN_DEFAULTS = {
    "data": None,
    "train_file": None,
    "val_file": None,
    "out": None,
    "seed": 0,
    "c_mode": "nonuniform",
    "epochs": 20,
    "batch_size": 16,
    "lr_main": 3e-3,
    "lr_c": 1e-5,
    "hidden_dim": 32,
    "weight_decay": 0.0,
    "class_weights": "auto",
}


def cmd_train(args: argparse.Namespace) -> int:
    options = _resolve(args, TRAIN_DEFAULTS)
    out = _out_dir(options)
    train_path = options["train_file"]
    val_path = options["val_file"]
    if options["data"]:
        base = Path(options["data"])
        train_path = train_path or base / "train.jsonl"
        val_path = val_path or base / "val.jsonl"
    train_set = _load_dataset(train_path, "train-file")
    val_set = _load_dataset(val_path, "val-file") if val_path else None

    weights = options["class_weights"]
    if isinstance(weights, str):
        weights = None if weights == "auto" else _parse_floats(weights, "class_weights")
    try:
        config = TrainConfig(
            lr_main=options["lr_main"],
            lr_c=options["lr_c"],
            epochs=options["epochs"],
            batch_size=options["batch_size"],
            seed=options["seed"],
            class_weights=weights,
            c_mode=options["c_mode"],
            hidden_dim=options["hidden_dim"],
            weight_decay=options["weight_decay"],
        )
        config.validate()
    except ValueError as e:
        raise UsageError(f"invalid training config: {e}")

    model, history = train(config, train_set, val_set)

    run_config = _run_config(
        "train",
        {**options, "train_file": str(train_path), "val_file": str(val_path) if val_path else None},
        args.no_timestamp,
    )
    save_checkpoint(model, out / "checkpoint.json", extra={"run_config": run_config})
    lines = [json.dumps({"type": "run_config", **run_config})]
    lines += [json.dumps({"type": "epoch", **rec}) for rec in history.to_records()]
    (out / "history.jsonl").write_text(
        "\n".join(lines) + "\n", encoding="utf-8", newline="\n"
    )
    _write_json(out / "run_config.json", run_config)
    final = history.losses[-1]
    print(f"trained {config.epochs} epochs; final mean total loss {final.total:.6f}")
    print(f"checkpoint: {out / 'checkpoint.json'}")
    return 0


EVAL_DEFAULTS = {
    "checkpoint": None,
    "data": None,
    "out": None,
    "modes": "all",
    "seed": 0,
}


def cmd_eval(args: argparse.Namespace) -> int:
    options = _resolve(args, EVAL_DEFAULTS)
    if not options["checkpoint"]:
        raise UsageError("--checkpoint is required")
    ckpt = Path(options["checkpoint"])
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    dataset = _load_dataset(options["data"], "data")
    modes = _parse_modes(options["modes"])
    report = evaluate(model, dataset, modes, n_threads=configured_threads())
    table = report.format_table()
    print(table)
    if options["out"]:
        out = _out_dir(options)
        run_config = _run_config("eval", options, args.no_timestamp)
        _write_json(out / "report.json", {"run_config": run_config, "report": report.as_dict()})
        (out / "report.txt").write_text(table + "\n", encoding="utf-8", newline="\n")
    return 0


INFER_DEFAULTS = {
    "checkpoint": None,
    "data": None,
    "id": None,
    "modes": "all",
    "out": None,
    "seed": 0,
}


def _infer_record(model, dataset: Dataset | None, options: dict) -> dict:
    if options["id"] is not None:
        if dataset is None:
            raise UsageError("--id needs --data")
        sample = next((s for s in dataset.samples if s.id == options["id"]), None)
        if sample is None:
            raise UsageError(f"sample id {options['id']!r} not found")
        text, image, sample_id = sample.text, sample.image, sample.id
        label_names = dataset.label_names
    else:
        raw = sys.stdin.read().strip()
        if not raw:
            raise UsageError("no --id given and nothing on stdin")
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise UsageError(f"stdin record is not valid JSON: {e}")
        sample_id = rec.get("id", "stdin")
        text = None if rec.get("text") is None else np.asarray(rec["text"], dtype=np.float64)
        image = None if rec.get("image") is None else np.asarray(rec["image"], dtype=np.float64)
        label_names = tuple(f"class-{i}" for i in range(model.num_classes))
        if text is not None and text.size != model.d_t:
            raise UsageError(f"text has {text.size} dims, checkpoint expects {model.d_t}")
        if image is not None and image.size != model.d_i:
            raise UsageError(f"image has {image.size} dims, checkpoint expects {model.d_i}")
        if text is None and image is None:
            raise UsageError("record has no modality present")

    bundle, available = sample_bundle(model, text, image)
    result: dict = {"id": sample_id, "modes": {}}
    for mode in _parse_modes(options["modes"]):
        if mode not in available:
            missing = "text" if text is None else "image"
            result["modes"][mode.value] = {
                "available": False,
                "reason": f"requires {missing} branch scores",
            }
            continue
        scores = mode_scores(bundle, mode)
        idx = int(np.argmax(scores))
        result["modes"][mode.value] = {
            "available": True,
            "class_index": idx,
            "class_label": label_names[idx],
            "scores": scores.tolist(),
            "probabilities": softmax(scores).tolist(),
        }
    return result


def cmd_infer(args: argparse.Namespace) -> int:
    options = _resolve(args, INFER_DEFAULTS)
    if not options["checkpoint"]:
        raise UsageError("--checkpoint is required")
    ckpt = Path(options["checkpoint"])
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    dataset = _load_dataset(options["data"], "data") if options["data"] else None
    result = _infer_record(model, dataset, options)
    result["run_config"] = _run_config("infer", options, args.no_timestamp)
    text_out = json.dumps(result, indent=2)
    print(text_out)
    if options["out"]:
        out = _out_dir(options)
        (out / "inference.json").write_text(text_out + "\n", encoding="utf-8", newline="\n")
    return 0


GRADCHECK_DEFAULTS = {
    "seed": 0,
    "points": 100,
    "tolerance": 1e-5,
    "hidden_dim": 4,
    "d_t": 6,
    "d_i": 6,
    "c_mode": "nonuniform",
    "out": None,
}


def cmd_gradcheck(args: argparse.Namespace) -> int:
    options = _resolve(args, GRADCHECK_DEFAULTS)
    if options["points"] < 1:
        raise UsageError("--points must be at least 1")
    results = run_gradient_checks(
        seed=options["seed"],
        n_points=options["points"],
        d_t=options["d_t"],
        d_i=options["d_i"],
        hidden_dim=options["hidden_dim"],
        c_mode=options["c_mode"],
        tolerance=options["tolerance"],
    )
    print(format_results(results))
    if options["out"]:
        out = _out_dir(options)
        _write_json(
            out / "gradcheck.json",
            {
                "run_config": _run_config("gradcheck", options, args.no_timestamp),
                "results": [
                    {
                        "name": r.name,
                        "group": r.group,
                        "max_rel_err": r.max_rel_err,
                        "tolerance": r.tolerance,
                        "passed": r.passed,
                    }
                    for r in results
                ],
            },
        )
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfmsa",
        description="Counterfactual multimodal fusion: synthesize data, train, "
        "evaluate, infer, and verify gradients.",
    )
    parser.add_argument("--version", action="version", version=f"cfmsa {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file with option defaults")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--no-timestamp",
            action="store_true",
            help="omit timestamps so reruns are byte-identical",
        )

    p = sub.add_parser("synth", help="generate the synthetic bias benchmark")
    common(p)
    p.add_argument("--n-train", type=int, dest="n_train", default=None)
    p.add_argument("--n-val", type=int, dest="n_val", default=None)
    p.add_argument("--n-test", type=int, dest="n_test", default=None)
    p.add_argument("--d-t", type=int, dest="d_t", default=None)
    p.add_argument("--d-i", type=int, dest="d_i", default=None)
    p.add_argument("--rho", type=float, default=None, help="bias strength in [0,1]")
    p.add_argument("--bias-dims", type=int, dest="bias_dims", default=None)
    p.add_argument("--signal-scale", type=float, dest="signal_scale", default=None)
    p.add_argument("--noise-scale", type=float, dest="noise_scale", default=None)
    p.add_argument(
        "--no-flip-at-test",
        action="store_false",
        dest="flip_at_test",
        default=None,
        help="keep the train-time bias rule in the test split",
    )
    p.add_argument("--priors", default=None, help="comma-separated class priors")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on feature files")
    common(p)
    p.add_argument("--data", default=None, help="directory with train.jsonl/val.jsonl")
    p.add_argument("--train-file", dest="train_file", default=None)
    p.add_argument("--val-file", dest="val_file", default=None)
    p.add_argument("--c-mode", dest="c_mode", choices=["random", "prior", "uniform", "nonuniform"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, dest="batch_size", default=None)
    p.add_argument("--lr-main", type=float, dest="lr_main", default=None)
    p.add_argument("--lr-c", type=float, dest="lr_c", default=None)
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim", default=None)
    p.add_argument("--weight-decay", type=float, dest="weight_decay", default=None)
    p.add_argument(
        "--class-weights",
        dest="class_weights",
        default=None,
        help='"auto" (inverse frequency) or comma-separated values',
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a feature file")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--modes", default=None, help="all or comma list: te,tie-text,tie-image,tie-joint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="debiased inference for one record")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--id", default=None, help="sample id inside --data")
    p.add_argument("--modes", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    common(p)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim", default=None)
    p.add_argument("--d-t", type=int, dest="d_t", default=None)
    p.add_argument("--d-i", type=int, dest="d_i", default=None)
    p.add_argument("--c-mode", dest="c_mode", choices=["random", "prior", "uniform", "nonuniform"], default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
