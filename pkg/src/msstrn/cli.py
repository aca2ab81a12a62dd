"""Command-line entry point: train, eval, predict, gradcheck, synth.

Every subcommand prints one JSON document on stdout when it succeeds. On
failure it prints a one-line JSON object ``{"error": ..., "message": ...}``
on stderr and exits nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any

import torch

from .data import SynthConfig, TrafficSeries, load_series, metrics, persistence_forecast, prepare_dataset, \
    save_series, train_series_std
from .gradcheck import TINY, gradient_suite
from .model import Checkpoint, ModelConfig
from .numeric import ConfigError, MsstrnError
from .trainer import TrainConfig, evaluate, export_predictions, train

CONFIG_SECTIONS = ("model", "train", "synth")
GRADCHECK_TOL = 1e-4


class CliError(MsstrnError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


@dataclasses.dataclass
class RunConfig:
    model: dict[str, Any]
    train: TrainConfig
    synth: SynthConfig


def load_config(path: str | Path | None) -> RunConfig:
    """Read a run config with optional ``model``, ``train`` and ``synth`` sections."""
    doc: dict[str, Any] = {}
    if path is not None:
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    model = dict(doc.get("model", {}))
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    if set(model) - known:
        raise ConfigError(f"unknown model config keys: {sorted(set(model) - known)}")
    return RunConfig(model, TrainConfig.from_dict(doc.get("train", {})), SynthConfig.from_dict(doc.get("synth", {})))


def model_config(section: dict[str, Any], series: TrafficSeries) -> ModelConfig:
    n = series.num_nodes
    if section.get("num_nodes", n) != n:
        raise ConfigError(f"config num_nodes={section['num_nodes']} but the data has {n} nodes")
    return ModelConfig.from_dict({**section, "num_nodes": n})


def load_data(source: str, synth: SynthConfig) -> tuple[TrafficSeries, dict[str, Any]]:
    if source == "synth":
        return synth.generate(), {"source": "synth", "synth": dataclasses.asdict(synth)}
    return load_series(source), {"source": "csv", "path": str(source)}


def _checkpoint_data(args, ckpt: Checkpoint):
    """Series and test split for a checkpoint, normalized with its training statistics."""
    synth = SynthConfig(**ckpt.extras.get("data", {}).get("synth", {}))
    if args.config is not None:
        synth = load_config(args.config).synth
    series, _ = load_data(args.data, synth)
    cfg = ckpt.config
    if series.num_nodes != cfg.num_nodes:
        raise ConfigError(f"checkpoint expects {cfg.num_nodes} nodes, data has {series.num_nodes}")
    stats = (ckpt.extras["mean"], ckpt.extras["std"]) if "mean" in ckpt.extras else None
    return prepare_dataset(series, cfg.input_len, cfg.output_len, stats=stats)


def cmd_train(args) -> dict[str, Any]:
    run = load_config(args.config)
    series, source = load_data(args.data, run.synth)
    cfg = model_config(run.model, series)
    data = prepare_dataset(series, cfg.input_len, cfg.output_len)
    ckpt, history = train(cfg, data, run.train)
    ckpt.extras.update(data=source, train=dataclasses.asdict(run.train))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / "checkpoint.json")
    (out / "history.json").write_text(json.dumps(history.to_dict(), indent=1))
    test = data[2]
    report = {
        "best_epoch": history.best_epoch,
        "epochs": len(history.records),
        "stop_reason": history.stop_reason,
        "best_val_mae": history.best_val_mae,
        "train_series_std": train_series_std(series, cfg.input_len, cfg.output_len),
        "test": evaluate(ckpt, test)["overall"],
        "persistence_test": metrics(persistence_forecast(test), test.targets)._asdict(),
        "checkpoint": str(out / "checkpoint.json"),
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    return report


def cmd_eval(args) -> dict[str, Any]:
    ckpt = Checkpoint.load(args.checkpoint)
    return evaluate(ckpt, _checkpoint_data(args, ckpt)[2])


def cmd_predict(args) -> dict[str, Any]:
    ckpt = Checkpoint.load(args.checkpoint)
    rows = export_predictions(ckpt, _checkpoint_data(args, ckpt)[2], args.out)
    return {"rows": rows, "out": str(args.out)}


def cmd_gradcheck(args) -> dict[str, Any]:
    section = load_config(args.config).model if args.config else {}
    cfg = ModelConfig.from_dict({**TINY.to_dict(), **section})
    result = gradient_suite(cfg, seed=args.seed)
    report = {"max_rel_err": result["max_rel_err"], "passed": result["max_rel_err"] < args.tol,
              "per_check": result["per_check"], "seconds": result["seconds"]}
    if not report["passed"]:
        print(json.dumps(report))
        raise CliError(f"max relative error {result['max_rel_err']:.3e} exceeds {args.tol:g}")
    return report


def cmd_synth(args) -> dict[str, Any]:
    synth = SynthConfig(args.nodes, args.length, args.coupling, args.noise, args.seed)
    save_series(synth.generate(), args.out)
    return {"out": str(args.out), **dataclasses.asdict(synth)}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msstrn", description="Multi-scale spatial-temporal recurrent traffic forecaster.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="fit a model and write checkpoint, history and report")
    p.add_argument("--config", help="JSON with optional model/train/synth sections")
    p.add_argument("--data", required=True, help="CSV path, or 'synth'")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "metrics on the test split"),
                              ("predict", cmd_predict, "export test-split predictions as CSV")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="CSV path, or 'synth'")
        p.add_argument("--config", help="override the synth section stored in the checkpoint")
        if name == "predict":
            p.add_argument("--out", required=True, help="CSV destination")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config", help="JSON whose model section overrides the tiny config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic series CSV")
    p.add_argument("--nodes", type=int, default=8)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coupling", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
        torch.set_num_threads(1)
        result = args.func(args)
    except (MsstrnError, ValueError, OSError, KeyError, TypeError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else repr(exc)
        print(json.dumps({"error": type(exc).__name__, "message": message}), file=sys.stderr)
        return 2 if isinstance(exc, CliError) else 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
