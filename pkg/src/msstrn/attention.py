"""Spatial-temporal synchronous attention.

Queries and keys come from the raw window input; the value is the window
after graph convolution, so spatial mixing happens before temporal attention.
Attention runs over the s positions of a window, independently per node.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .conv import NodeAdaptiveWeights, apgcn
from .graph import uniform_
from .numeric import DTYPE, ConfigError, ShapeError, expect_shape, softmax_rows, softmax_unchecked


class AttentionParams(nn.Module):
    """Per-head query/key projections and the output projection.

    ``query`` and ``key`` are h x d_in x (d_out / h); ``out`` is d_out x d_out.
    With ``value_projection=True`` an extra d_in x d_out value map is created,
    which replaces the graph-convolved value (plain multi-head attention).
    """

    def __init__(self, d_in: int, d_out: int, heads: int, *, value_projection: bool = False,
                 generator: torch.Generator | None = None, dtype: torch.dtype = DTYPE):
        super().__init__()
        if heads < 1 or d_out % heads:
            raise ConfigError(f"d_out={d_out} must be a positive multiple of heads={heads}")
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        self.d_in, self.d_out, self.heads = d_in, d_out, heads
        self.head_dim = d_out // heads
        b_in, b_out = 1.0 / math.sqrt(d_in), 1.0 / math.sqrt(d_out)
        self.query = nn.Parameter(uniform_(torch.empty(heads, d_in, self.head_dim, dtype=dtype), b_in, generator))
        self.key = nn.Parameter(uniform_(torch.empty(heads, d_in, self.head_dim, dtype=dtype), b_in, generator))
        self.out = nn.Parameter(uniform_(torch.empty(d_out, d_out, dtype=dtype), b_out, generator))
        if value_projection:
            self.value = nn.Parameter(uniform_(torch.empty(d_in, d_out, dtype=dtype), b_in, generator))
        else:
            self.register_parameter("value", None)


def attention_scores(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    return softmax_rows(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]))


def temporal_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Scaled dot-product attention over the time axis; inputs are (..., N, s, d_h)."""
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"q/k/v shapes differ: {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    return attention_scores(q, k) @ v


def _attend(q, k, v):
    return softmax_unchecked(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])) @ v


def multi_head(x: torch.Tensor, value: torch.Tensor, w: AttentionParams) -> torch.Tensor:
    """x: (..., N, s, d_in), value: (..., N, s, d_out) -> (..., N, s, d_out)."""
    return multi_head_group(x, value, [w])[0]


def multi_head_group(x: torch.Tensor, value: torch.Tensor, ws: list[AttentionParams]) -> list[torch.Tensor]:
    """Run several independent attention blocks that read the same ``x`` in one pass.

    ``value`` holds each block's value side by side on the channel axis.
    """
    d_in, dh = ws[0].d_in, ws[0].head_dim
    if any(w.d_in != d_in or w.head_dim != dh for w in ws):
        raise ShapeError("grouped attention blocks must share d_in and head size")
    expect_shape(x, (None, None, d_in), "attention input")
    expect_shape(value, (None, None, sum(w.d_out for w in ws)), "attention value")
    query = torch.cat([w.query for w in ws]) if len(ws) > 1 else ws[0].query
    key = torch.cat([w.key for w in ws]) if len(ws) > 1 else ws[0].key
    xs = x.unsqueeze(-4)  # (..., 1, N, s, d_in) against (H, 1, d_in, dh)
    q = xs @ query.unsqueeze(1)
    k = xs @ key.unsqueeze(1)
    # split the value channels into contiguous head groups
    v = value.unflatten(-1, (query.shape[0], dh)).movedim(-2, -4)
    heads = _attend(q, k, v)
    outs, first = [], 0
    for w in ws:
        concat = heads[..., first:first + w.heads, :, :, :].movedim(-4, -2).flatten(-2)
        outs.append(concat @ w.out)
        first += w.heads
    return outs


def stsatt(x: torch.Tensor, stack: torch.Tensor, emb: torch.Tensor,
           w_gcn: NodeAdaptiveWeights | None, w_att: AttentionParams) -> torch.Tensor:
    """Synchronous attention over one window.

    Args:
        x: (..., N, s, d_in) node-major window.
        stack, emb: graph position (K x N x N Chebyshev slice, N x d embedding).
        w_gcn: graph-convolution weights producing the value; ignored (may be
            None) when ``w_att`` carries its own value projection.
        w_att: attention parameters.

    Returns:
        (..., N, s, d_out)
    """
    if w_att.value is not None:
        value = x @ w_att.value
    else:
        if w_gcn is None:
            raise ConfigError("stsatt needs graph-convolution weights for its value")
        value = apgcn(x.transpose(-3, -2), stack, emb, w_gcn).transpose(-3, -2)
    return multi_head(x, value, w_att)
