"""Training loop with Adam and early stopping, evaluation, and prediction export."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .data import Metrics, SampleSet, denormalize, metrics
from .model import MSSTRN, Checkpoint, ModelConfig, build_model, l1_loss
from .numeric import ConfigError, NumericError, ShapeError

log = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 8
    max_epochs: int = 200
    patience: int = 30
    weight_decay: float = 0.0
    grad_clip: float | None = None
    seed: int = 0
    device: str = "cpu"
    dtype: str = "float32"
    eval_batch_size: int = 256

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience and max_epochs must be >= 1")
        if not 0.0 <= self.weight_decay <= 0.001:
            raise ConfigError(f"weight_decay must lie in [0, 0.001], got {self.weight_decay}")
        if self.device != "cpu":
            raise ConfigError("only device='cpu' is supported")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    val_rmse: float
    val_mape: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    @property
    def best_val_mae(self) -> float:
        return min(r.val_mae for r in self.records)

    def to_dict(self) -> dict[str, Any]:
        return {"records": [dataclasses.asdict(r) for r in self.records],
                "best_epoch": self.best_epoch, "stop_reason": self.stop_reason}


class EarlyStopping:
    """Tracks the best (lowest) score and signals after ``patience`` non-improving calls."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.bad_epochs = 0

    def step(self, score: float) -> bool:
        """Record ``score``; return True if it is a new best."""
        if score < self.best:
            self.best = score
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def predict(model: MSSTRN, samples: SampleSet, batch_size: int = 256) -> np.ndarray:
    """Forecasts in original units, shape M x T' x N x 1."""
    dtype = next(model.parameters()).dtype
    out = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            x = torch.as_tensor(samples.inputs[start:start + batch_size], dtype=dtype)
            out.append(model(x).double().numpy())
    cfg = model.cfg
    if not out:
        return np.zeros((0, cfg.output_len, cfg.num_nodes, 1))
    return denormalize(np.concatenate(out), samples.mean, samples.std)


def evaluate_mae(model: MSSTRN, samples: SampleSet, batch_size: int = 256) -> Metrics:
    return metrics(predict(model, samples, batch_size), samples.targets)


def _param_groups(model: MSSTRN, weight_decay: float):
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "bias" or leaf.startswith("ln_"):
            no_decay.append(p)
        else:
            decay.append(p)
    return [{"params": decay, "weight_decay": weight_decay},
            {"params": no_decay, "weight_decay": 0.0}]


def make_optimizer(model: MSSTRN, tcfg: TrainConfig) -> torch.optim.Optimizer:
    # AdamW applies decay to the weights directly, outside the moment estimates
    return torch.optim.AdamW(_param_groups(model, tcfg.weight_decay), lr=tcfg.learning_rate,
                             betas=(0.9, 0.999), eps=1e-8, foreach=False)


def _check_shapes(cfg: ModelConfig, samples: SampleSet, name: str) -> None:
    want = (cfg.input_len, cfg.num_nodes, cfg.input_dim)
    if samples.inputs.shape[1:] != want or samples.targets.shape[1:] != (cfg.output_len, cfg.num_nodes, 1):
        raise ShapeError(f"{name} set shapes {samples.inputs.shape}/{samples.targets.shape} "
                         f"do not match the model config")


def train(cfg: ModelConfig, data: tuple[SampleSet, SampleSet, SampleSet], tcfg: TrainConfig,
          target_val_mae: float | None = None) -> tuple[Checkpoint, TrainHistory]:
    """Fit a model; return the best-validation-MAE checkpoint and the history.

    ``target_val_mae`` optionally ends training once validation MAE reaches it.
    """
    train_set, val_set, _ = data
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation sets must be nonempty")
    _check_shapes(cfg, train_set, "train")
    _check_shapes(cfg, val_set, "validation")
    dtype = DTYPES[tcfg.dtype]
    torch.manual_seed(tcfg.seed)
    model = build_model(cfg, dtype=dtype)
    opt = make_optimizer(model, tcfg)
    rng = np.random.default_rng(tcfg.seed)
    x_all = torch.as_tensor(train_set.inputs, dtype=dtype)
    y_all = torch.as_tensor(train_set.normalized_targets(), dtype=dtype)

    history = TrainHistory()
    stopper = EarlyStopping(tcfg.patience)
    best_state = Checkpoint.from_model(model)
    extras = {"mean": train_set.mean, "std": train_set.std}
    for epoch in range(1, tcfg.max_epochs + 1):
        start = time.perf_counter()
        model.train()
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for b, first in enumerate(range(0, len(order), tcfg.batch_size)):
            idx = torch.as_tensor(order[first:first + tcfg.batch_size])
            opt.zero_grad()
            loss = l1_loss(model(x_all[idx]), y_all[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            loss.backward()
            if tcfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip)
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        val = evaluate_mae(model, val_set, tcfg.eval_batch_size)
        record = EpochRecord(epoch, total / count, val.mae, val.rmse, val.mape, time.perf_counter() - start)
        history.records.append(record)
        log.info("epoch %d train_loss=%.5f val_mae=%.5f", epoch, record.train_loss, record.val_mae)
        if stopper.step(val.mae):
            history.best_epoch = epoch
            best_state = Checkpoint.from_model(model, **extras)
        if target_val_mae is not None and val.mae <= target_val_mae:
            history.stop_reason = "target-reached"
            break
        if stopper.should_stop:
            history.stop_reason = "early-stop"
            break
    else:
        history.stop_reason = "max-epochs"
    return best_state, history


def _as_model(checkpoint: Checkpoint | MSSTRN) -> MSSTRN:
    return checkpoint.to_model() if isinstance(checkpoint, Checkpoint) else checkpoint


def evaluate(checkpoint: Checkpoint | MSSTRN, test_set: SampleSet, batch_size: int = 256) -> dict[str, Any]:
    """Overall and per-horizon-step metrics in original units."""
    model = _as_model(checkpoint)
    _check_shapes(model.cfg, test_set, "test")
    pred = predict(model, test_set, batch_size)
    truth = test_set.targets
    overall = metrics(pred, truth)
    per_step = [metrics(pred[:, k], truth[:, k])._asdict() for k in range(truth.shape[1])]
    return {"overall": overall._asdict(), "per_step": per_step, "samples": len(test_set)}


PREDICTION_COLUMNS = ("sample_index", "horizon_step", "node_id", "truth", "prediction")


def export_predictions(checkpoint: Checkpoint | MSSTRN, test_set: SampleSet, out_path: str | Path,
                       batch_size: int = 256) -> int:
    """Write one row per (sample, horizon step, node); return the number of data rows."""
    model = _as_model(checkpoint)
    _check_shapes(model.cfg, test_set, "test")
    pred = predict(model, test_set, batch_size)
    node_ids = test_set.node_ids or [str(n) for n in range(model.cfg.num_nodes)]
    rows = 0
    with Path(out_path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        M, H, N, _ = pred.shape
        for m in range(M):
            for k in range(H):
                for n in range(N):
                    writer.writerow([m, k + 1, node_ids[n], repr(float(test_set.targets[m, k, n, 0])),
                                     repr(float(pred[m, k, n, 0]))])
                    rows += 1
    return rows


def read_predictions(path: str | Path) -> list[dict[str, Any]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREDICTION_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{"sample_index": int(r["sample_index"]), "horizon_step": int(r["horizon_step"]),
                 "node_id": r["node_id"], "truth": float(r["truth"]), "prediction": float(r["prediction"])}
                for r in reader]
