"""Adaptive position graphs: learnable per-step and per-window transition matrices.

A node embedding is combined with a time-position embedding, layer-normalized,
and turned into a row-stochastic N x N matrix by a row softmax of the
embedding Gram matrix. Each matrix is expanded into a Chebyshev stack.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn

from .numeric import DTYPE, ConfigError, ShapeError, layer_norm, softmax_rows


def uniform_(t: torch.Tensor, bound: float, generator: torch.Generator) -> torch.Tensor:
    with torch.no_grad():
        return t.uniform_(-bound, bound, generator=generator)


class EmbeddingBank(nn.Module):
    """Node embedding plus single-step and multi-step time-position embeddings.

    Args:
        num_nodes: N.
        dim: embedding size d, shared by all three embedding families.
        input_len: T, number of input steps.
        window: s, sub-window size; T must be divisible by s.
        use_time: when False the time-position embeddings are not created and
            every position sees ``LayerNorm(E_phi)`` alone.
        train_norm: whether the layer-norm gain/bias are trainable.
    """

    def __init__(self, num_nodes: int, dim: int, input_len: int, window: int, *,
                 use_time: bool = True, train_norm: bool = True,
                 generator: torch.Generator | None = None, dtype: torch.dtype = DTYPE):
        super().__init__()
        if min(num_nodes, dim, input_len, window) < 1:
            raise ConfigError("num_nodes, dim, input_len and window must be >= 1")
        if input_len % window:
            raise ConfigError(f"input_len={input_len} is not divisible by window={window}")
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        self.num_nodes, self.dim = num_nodes, dim
        self.input_len, self.window = input_len, window
        self.num_windows = input_len // window
        self.use_time = use_time
        bound = 1.0 / math.sqrt(dim)

        def param(*shape):
            return nn.Parameter(uniform_(torch.empty(*shape, dtype=dtype), bound, generator))

        self.node = param(num_nodes, dim)
        if use_time:
            self.step = param(input_len, 1, dim)
            self.window_pos = param(self.num_windows, 1, dim)
        else:
            self.register_parameter("step", None)
            self.register_parameter("window_pos", None)
        for family in ("step", "window"):
            gain = nn.Parameter(torch.ones(dim, dtype=dtype), requires_grad=train_norm)
            bias = nn.Parameter(torch.zeros(dim, dtype=dtype), requires_grad=train_norm)
            self.register_parameter(f"ln_{family}_gain", gain)
            self.register_parameter(f"ln_{family}_bias", bias)

    def embedding_count(self) -> int:
        """Trainable embedding entries, excluding layer-norm parameters."""
        return sum(p.numel() for p in (self.node, self.step, self.window_pos) if p is not None)

    def _combine(self, pos: torch.Tensor | None, count: int, gain, bias) -> torch.Tensor:
        if pos is None:
            base = self.node.expand(count, -1, -1)
        else:
            base = self.node + pos
        return layer_norm(base, gain, bias)

    def step_embeddings(self) -> torch.Tensor:
        """E_s, shape T x N x d."""
        return self._combine(self.step, self.input_len, self.ln_step_gain, self.ln_step_bias)

    def window_embeddings(self) -> torch.Tensor:
        """E_m, shape T_c x N x d."""
        return self._combine(self.window_pos, self.num_windows, self.ln_window_gain, self.ln_window_bias)


def gram_softmax(emb: torch.Tensor) -> torch.Tensor:
    """softmax_rows(E E^T) for every leading position of ``emb`` (..., N, d)."""
    return softmax_rows(emb @ emb.transpose(-1, -2))


def single_step_laplacian(bank: EmbeddingBank, i: int) -> torch.Tensor:
    if not 0 <= i < bank.input_len:
        raise IndexError(f"step index {i} outside [0, {bank.input_len})")
    return gram_softmax(bank.step_embeddings()[i])


def multi_step_laplacian(bank: EmbeddingBank, j: int) -> torch.Tensor:
    if not 0 <= j < bank.num_windows:
        raise IndexError(f"window index {j} outside [0, {bank.num_windows})")
    return gram_softmax(bank.window_embeddings()[j])


def chebyshev_stack(lhat: torch.Tensor, K: int) -> torch.Tensor:
    """Chebyshev terms T_0..T_{K-1} of ``lhat`` (..., N, N), stacked on a new axis 0."""
    if K < 2:
        raise ConfigError(f"Chebyshev depth K must be >= 2, got {K}")
    n = lhat.shape[-1]
    if lhat.dim() < 2 or lhat.shape[-2] != n:
        raise ShapeError(f"expected square matrices, got {tuple(lhat.shape)}")
    eye = torch.eye(n, dtype=lhat.dtype, device=lhat.device).expand_as(lhat)
    terms = [eye, lhat]
    for _ in range(2, K):
        terms.append(2.0 * lhat @ terms[-1] - terms[-2])
    return torch.stack(terms)


class GraphBanks(NamedTuple):
    """Chebyshev stacks and the embeddings that generated them.

    ``step_stack`` is K x T x N x N, ``window_stack`` K x T_c x N x N;
    ``step_emb`` and ``window_emb`` are T x N x d and T_c x N x d.
    """
    step_stack: torch.Tensor
    window_stack: torch.Tensor
    step_emb: torch.Tensor
    window_emb: torch.Tensor


def build_graph_banks(bank: EmbeddingBank, K: int, static_adjacency: torch.Tensor | None = None) -> GraphBanks:
    step_emb = bank.step_embeddings()
    window_emb = bank.window_embeddings()
    if static_adjacency is None:
        step_lap = gram_softmax(step_emb)
        window_lap = gram_softmax(window_emb)
    else:
        step_lap = static_adjacency.expand(bank.input_len, -1, -1)
        window_lap = static_adjacency.expand(bank.num_windows, -1, -1)
    return GraphBanks(chebyshev_stack(step_lap, K), chebyshev_stack(window_lap, K), step_emb, window_emb)


def row_normalize(adj: torch.Tensor) -> torch.Tensor:
    rows = adj.sum(dim=-1, keepdim=True)
    if bool((rows <= 0).any()) or bool((adj < 0).any()):
        raise ConfigError("static adjacency must be nonnegative with a positive sum in every row")
    return adj / rows
