"""Full forecaster: embeddings -> graph banks -> stacked SS/MS recurrent layers -> output head."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch
from torch import nn

from .graph import EmbeddingBank, build_graph_banks, row_normalize, uniform_
from .numeric import DTYPE, ConfigError, ShapeError, check_finite, expect_shape, layer_norm
from .recurrent import GraphConvTransform, GruGateParams, SyncAttentionTransform, run_layer

VARIANTS = ("full", "static", "only", "att", "apgcn")
LAYER_KINDS = ("SS", "MS")
TABLE7_STACKS = (
    "SS", "MS", "SS-SS", "MS-MS", "SS-MS", "SS-SS-SS",
    "SS-SS-MS", "SS-MS-MS", "MS-MS-SS", "MS-SS-SS", "MS-SS",
)


def parse_stack(stack: str | list[str] | tuple[str, ...]) -> list[str]:
    tokens = stack.split("-") if isinstance(stack, str) else list(stack)
    if not tokens or tokens == [""]:
        raise ConfigError("layer stack is empty")
    for tok in tokens:
        if tok not in LAYER_KINDS:
            raise ConfigError(f"invalid layer token {tok!r} in stack {stack!r}")
    return tokens


@dataclass
class ModelConfig:
    num_nodes: int
    input_dim: int = 1
    input_len: int = 12
    output_len: int = 12
    embed_dim: int = 6
    hidden_dim: int | None = 16  # None -> embed_dim
    cheb_k: int = 2
    heads: int = 4
    window: int = 2
    stack: str = "MS-SS"
    variant: str = "full"
    seed: int = 0
    adjacency: list[list[float]] | None = None
    train_norm: bool = True

    def __post_init__(self):
        if self.hidden_dim is None:
            self.hidden_dim = self.embed_dim
        if isinstance(self.stack, (list, tuple)):
            self.stack = "-".join(self.stack)
        self.validate()

    @property
    def layers(self) -> list[str]:
        return parse_stack(self.stack)

    @property
    def num_windows(self) -> int:
        return self.input_len // self.window

    def validate(self) -> None:
        parse_stack(self.stack)
        for name in ("num_nodes", "input_dim", "input_len", "output_len", "embed_dim",
                     "hidden_dim", "heads", "window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.cheb_k < 2:
            raise ConfigError(f"cheb_k must be >= 2, got {self.cheb_k}")
        if self.input_len % self.window:
            raise ConfigError(f"input_len={self.input_len} is not divisible by window={self.window}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.hidden_dim % self.heads and "MS" in self.layers and self.variant != "apgcn":
            raise ConfigError(f"hidden_dim={self.hidden_dim} is not divisible by heads={self.heads}")
        if self.variant == "static":
            if self.adjacency is None:
                raise ConfigError("variant 'static' requires an adjacency matrix")
            n = self.num_nodes
            if len(self.adjacency) != n or any(len(row) != n for row in self.adjacency):
                raise ConfigError(f"adjacency must be {n}x{n}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class OutputHead(nn.Module):
    """Layer norm over hidden channels, then a node-shared hidden -> T' map."""

    def __init__(self, hidden_dim: int, output_len: int, *, generator: torch.Generator,
                 train_norm: bool = True, dtype: torch.dtype = DTYPE):
        super().__init__()
        self.ln_gain = nn.Parameter(torch.ones(hidden_dim, dtype=dtype), requires_grad=train_norm)
        self.ln_bias = nn.Parameter(torch.zeros(hidden_dim, dtype=dtype), requires_grad=train_norm)
        bound = 1.0 / hidden_dim ** 0.5
        self.weight = nn.Parameter(uniform_(torch.empty(hidden_dim, output_len, dtype=dtype), bound, generator))
        self.bias = nn.Parameter(torch.zeros(output_len, dtype=dtype))

    def forward(self, h_last: torch.Tensor) -> torch.Tensor:
        return output_projection(h_last, self)


def output_projection(h_last: torch.Tensor, head: OutputHead) -> torch.Tensor:
    """(..., N, hidden) -> (..., T', N, 1)."""
    expect_shape(h_last, (None, head.weight.shape[0]), "output head input")
    y = layer_norm(h_last, head.ln_gain, head.ln_bias) @ head.weight + head.bias
    return y.transpose(-1, -2).unsqueeze(-1)


class RecurrentLayer(nn.Module):
    def __init__(self, kind: str, gates: GruGateParams, stride: int, hidden_dim: int):
        super().__init__()
        self.kind, self.stride, self.hidden_dim = kind, stride, hidden_dim
        self.gates = gates

    def forward(self, seq, banks):
        if self.kind == "MS":
            stacks, embs = banks.window_stack, banks.window_emb
        else:
            stacks, embs = banks.step_stack, banks.step_emb
        return run_layer(seq, self.kind, self.stride, stacks, embs, self.gates, self.hidden_dim)


class MSSTRN(nn.Module):
    """Multi-scale spatial-temporal recurrent forecaster built from a ModelConfig."""

    def __init__(self, cfg: ModelConfig, dtype: torch.dtype = DTYPE):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        self.bank = EmbeddingBank(cfg.num_nodes, cfg.embed_dim, cfg.input_len, cfg.window,
                                  use_time=cfg.variant != "only", train_norm=cfg.train_norm,
                                  generator=gen, dtype=dtype)
        if cfg.variant == "static":
            adj = row_normalize(torch.tensor(cfg.adjacency, dtype=dtype))
            self.register_buffer("static_adjacency", adj)
        else:
            self.static_adjacency = None
        layers = []
        feat = cfg.input_dim
        for kind in cfg.layers:
            d_in = feat + cfg.hidden_dim
            if kind == "SS":
                def make(d_in=d_in):
                    return GraphConvTransform(cfg.embed_dim, cfg.cheb_k, d_in, cfg.hidden_dim,
                                              generator=gen, dtype=dtype)
                stride = 1
            else:
                def make(d_in=d_in):
                    if cfg.variant == "apgcn":
                        return GraphConvTransform(cfg.embed_dim, cfg.cheb_k, d_in, cfg.hidden_dim,
                                                  generator=gen, dtype=dtype)
                    return SyncAttentionTransform(cfg.embed_dim, cfg.cheb_k, d_in, cfg.hidden_dim, cfg.heads,
                                                  value="linear" if cfg.variant == "att" else "graph",
                                                  generator=gen, dtype=dtype)
                stride = cfg.window
            layers.append(RecurrentLayer(kind, GruGateParams(make), stride, cfg.hidden_dim))
            feat = cfg.hidden_dim
        self.layers = nn.ModuleList(layers)
        self.head = OutputHead(cfg.hidden_dim, cfg.output_len, generator=gen,
                               train_norm=cfg.train_norm, dtype=dtype)

    def graph_banks(self):
        return build_graph_banks(self.bank, self.cfg.cheb_k, self.static_adjacency)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: B x T x N x C (normalized) -> B x T' x N x 1 (normalized)."""
        cfg = self.cfg
        if x.dim() != 4:
            raise ShapeError(f"expected input B x T x N x C, got {tuple(x.shape)}")
        expect_shape(x, (cfg.input_len, cfg.num_nodes, cfg.input_dim), "model input")
        check_finite(x, "model input")
        banks = self.graph_banks()
        check_finite(banks.step_stack, "graph banks")
        check_finite(banks.window_stack, "graph banks")
        h = x
        for i, layer in enumerate(self.layers):
            h = check_finite(layer(h, banks), f"layer {i} ({layer.kind})")
        return check_finite(self.head(h[:, -1]), "output head")


def build_model(cfg: ModelConfig, dtype: torch.dtype = DTYPE) -> MSSTRN:
    return MSSTRN(cfg, dtype=dtype)


def l1_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    if pred.shape != truth.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} and truth {tuple(truth.shape)} differ")
    return (pred - truth).abs().mean()


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# checkpoint I/O ---------------------------------------------------------

CHECKPOINT_FORMAT = "msstrn-checkpoint/1"


@dataclass
class Checkpoint:
    """Model config, parameter values, and whatever the trainer needs to denormalize."""

    config: ModelConfig
    params: dict[str, torch.Tensor]
    extras: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: MSSTRN, **extras) -> "Checkpoint":
        params = {name: p.detach().clone() for name, p in model.named_parameters()}
        return cls(dataclasses.replace(model.cfg), params, dict(extras))

    def to_model(self, dtype: torch.dtype | None = None) -> MSSTRN:
        if dtype is None:
            dtype = next(iter(self.params.values())).dtype
        model = MSSTRN(dataclasses.replace(self.config), dtype=dtype)
        own = dict(model.named_parameters())
        if set(own) != set(self.params):
            raise ConfigError(f"checkpoint parameters do not match the config: "
                              f"{sorted(set(own) ^ set(self.params))}")
        with torch.no_grad():
            for name, p in own.items():
                src = self.params[name]
                if tuple(src.shape) != tuple(p.shape):
                    raise ShapeError(f"{name}: checkpoint shape {tuple(src.shape)} != {tuple(p.shape)}")
                p.copy_(src)
        return model

    def to_json(self) -> dict[str, Any]:
        params = {}
        for name, t in self.params.items():
            params[name] = {"shape": list(t.shape), "values": t.detach().cpu().reshape(-1).tolist()}
        dtype = str(next(iter(self.params.values())).dtype).removeprefix("torch.")
        return {"format": CHECKPOINT_FORMAT, "dtype": dtype, "config": self.config.to_dict(),
                "params": params, "extras": self.extras}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "Checkpoint":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"not a checkpoint document (format={doc.get('format')!r})")
        dtype = getattr(torch, doc.get("dtype", "float64"))
        params = {}
        for name, entry in doc["params"].items():
            values = torch.tensor(entry["values"], dtype=dtype)
            shape = tuple(entry["shape"])
            if values.numel() != torch.Size(shape).numel():
                raise ShapeError(f"{name}: {values.numel()} values for shape {shape}")
            params[name] = values.reshape(shape)
        return cls(ModelConfig.from_dict(doc["config"]), params, doc.get("extras", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_json(json.loads(Path(path).read_text()))
