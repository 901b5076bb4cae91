"""Command-line entry point: `relattn check|bench|train|eval`.

Configs are flat JSON objects (one level, scalar or list values). Unknown
keys are errors, not warnings: silent config drift would invalidate
ablation comparisons. Every run echoes its fully resolved config into the
output directory for provenance.

Exit codes: 0 success, 1 check/tolerance failure, 2 config error,
3 runtime abort (e.g. non-finite training loss).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field, fields

from .bench import BenchConfig, run_bench as _run_bench
from .checks import (run_equivalence_sweep, attention_gradient_check,
                     FORWARD_TOL, GRAD_TOL)
from .checkpoint import save_checkpoint, load_checkpoint
from .model import EncoderConfig
from .training import (TrainConfig, TrainingDiverged, train_run, evaluate_lengths,
                       TASKS)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


@dataclass
class CheckConfig:
    cases: int = 240
    seed: int = 0
    gradient_seeds: int = 5
    inject_bug: bool = False  # flips the edge-logit sign: mutation test hook

    def __post_init__(self):
        if self.cases < 1:
            raise ValueError("cases must be >= 1")


@dataclass
class EvalConfig:
    checkpoint: str = ""
    task: str = "reverse"
    eval_lengths: list = field(default_factory=lambda: [4, 8, 12, 16, 20, 24])
    seed: int = 0
    eval_sequences: int = 128

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.eval_lengths or any(n < 1 for n in self.eval_lengths):
            raise ValueError("eval_lengths must be nonempty with lengths >= 1")


def _flat_schema(*dataclass_types) -> dict[str, object]:
    """Flat key -> default map built from dataclass fields."""
    schema = {}
    for dc in dataclass_types:
        for f in fields(dc):
            if f.name == "encoder":
                continue
            if f.default is not dataclasses.MISSING:
                schema[f.name] = f.default
            else:
                schema[f.name] = f.default_factory()
    return schema


def _check_type(key: str, value, default) -> object:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"key {key!r} expects a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key {key!r} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r} expects a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"key {key!r} expects a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"key {key!r} expects a list of integers, got {value!r}")
        return value
    raise ConfigError(f"key {key!r} has unsupported type")


def _resolve(doc: dict, schema: dict) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    resolved = dict(schema)
    for key, value in doc.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = _check_type(key, value, schema[key])
    return resolved


def parse_config(path: str | None, kind: str):
    """Parse and validate a flat JSON config for a subcommand. Returns
    (config_object, resolved_flat_dict). A missing path means all defaults."""
    doc = {}
    if path is not None:
        try:
            with open(path) as f:
                doc = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")

    try:
        if kind == "train":
            schema = _flat_schema(EncoderConfig, TrainConfig)
            resolved = _resolve(doc, schema)
            enc_names = {f.name for f in fields(EncoderConfig)}
            enc = EncoderConfig(**{k: v for k, v in resolved.items() if k in enc_names})
            rest = {k: v for k, v in resolved.items()
                    if k not in enc_names and k != "encoder"}
            return TrainConfig(encoder=enc, **rest), resolved
        if kind == "check":
            resolved = _resolve(doc, _flat_schema(CheckConfig))
            return CheckConfig(**resolved), resolved
        if kind == "bench":
            resolved = _resolve(doc, _flat_schema(BenchConfig))
            return BenchConfig(**resolved), resolved
        if kind == "eval":
            resolved = _resolve(doc, _flat_schema(EvalConfig))
            return EvalConfig(**resolved), resolved
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}")
    raise ConfigError(f"unknown subcommand {kind!r}")


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def _echo_config(out_dir, resolved: dict) -> None:
    _write_json(out_dir / "config.json", resolved)


def run_check(cfg: CheckConfig, out_dir) -> int:
    results = run_equivalence_sweep(cfg.cases, cfg.seed,
                                    flip_edge_logit_sign=cfg.inject_bug)
    grad_reports = []
    grad_ok = True
    for s in range(cfg.gradient_seeds):
        errors = attention_gradient_check(cfg.seed + s)
        worst = max(errors.values())
        grad_ok = grad_ok and worst <= 1.0
        grad_reports.append({"seed": cfg.seed + s, "worst_normalized_error": worst})
    sweep_ok = all(r.passed for r in results)
    report = {
        "forward_tolerance": FORWARD_TOL,
        "grad_tolerance": GRAD_TOL,
        "num_cases": len(results),
        "sweep_passed": sweep_ok,
        "gradient_suite_passed": grad_ok,
        "worst_forward_error": max(r.max_forward_err for r in results),
        "worst_grad_error": max(r.max_grad_err for r in results),
        "cases": [{"case": r.case, "max_forward_err": r.max_forward_err,
                   "max_grad_err": r.max_grad_err, "passed": r.passed}
                  for r in results],
        "gradient_suite": grad_reports,
    }
    _write_json(out_dir / "check_report.json", report)
    if not (sweep_ok and grad_ok):
        failing = [r.case for r in results if not r.passed]
        print(f"check FAILED: {len(failing)} case(s) over tolerance", file=sys.stderr)
        for case in failing[:5]:
            print(f"  offending config: {case}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"check passed: {len(results)} equivalence cases, "
          f"{cfg.gradient_seeds} gradient seeds")
    return EXIT_OK


def run_bench(cfg: BenchConfig, out_dir) -> int:
    report = _run_bench(cfg)
    _write_json(out_dir / "bench_report.json", report)
    for point in report["points"]:
        line = (f"n={point['n']}: efficient/baseline overhead "
                f"{point['efficient_over_baseline']:.3f}x")
        if "reference_over_efficient" in point:
            line += f", reference/efficient {point['reference_over_efficient']:.1f}x"
        print(line)
    return EXIT_OK


def run_train(cfg: TrainConfig, out_dir) -> int:
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w") as mf:
        def log_step(step, loss, lr):
            mf.write(json.dumps({"event": "step", "step": step,
                                 "loss": loss, "lr": lr}) + "\n")

        metrics, params = train_run(cfg, step_callback=log_step)
        for length, acc in metrics.per_length_accuracy.items():
            mf.write(json.dumps({"event": "eval", "length": length,
                                 "accuracy": acc}) + "\n")
    save_checkpoint(out_dir / "checkpoint.json", params, cfg.encoder, cfg.seed)
    _write_json(out_dir / "run_metrics.json", metrics.as_dict())
    print(f"train accuracy {metrics.final_train_accuracy:.3f} "
          f"(chance {metrics.chance_accuracy:.3f}), "
          f"{metrics.steps_per_sec:.1f} steps/sec")
    return EXIT_OK


def run_eval(cfg: EvalConfig, out_dir) -> int:
    if not cfg.checkpoint:
        raise ConfigError("eval requires a 'checkpoint' path")
    try:
        params, enc_cfg, _seed = load_checkpoint(cfg.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint file not found: {cfg.checkpoint}")
    accuracies = evaluate_lengths(params, enc_cfg, cfg.task, cfg.eval_lengths,
                                  seed=cfg.seed,
                                  sequences_per_length=cfg.eval_sequences)
    _write_json(out_dir / "eval_results.json",
                {"per_length_accuracy": accuracies})
    with open(out_dir / "metrics.jsonl", "w") as mf:
        for length, acc in accuracies.items():
            mf.write(json.dumps({"event": "eval", "length": length,
                                 "accuracy": acc}) + "\n")
    for length, acc in accuracies.items():
        print(f"length {length}: accuracy {acc:.3f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="relattn",
        description="Relation-aware self-attention: check, bench, train, eval")
    parser.add_argument("subcommand", choices=["check", "bench", "train", "eval"])
    parser.add_argument("--config", default=None,
                        help="flat JSON config file (defaults apply if omitted)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed (echo is unchanged)")
    args = parser.parse_args(argv)

    from pathlib import Path
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg, resolved = parse_config(args.config, args.subcommand)
        _echo_config(out_dir, resolved)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.subcommand == "check":
            return run_check(cfg, out_dir)
        if args.subcommand == "bench":
            return run_bench(cfg, out_dir)
        if args.subcommand == "train":
            return run_train(cfg, out_dir)
        return run_eval(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
