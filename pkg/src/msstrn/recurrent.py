"""GRU cells whose dense gate maps are replaced by graph operators, and the layer scan.

The multi-step cell consumes a whole window of s steps at once and uses
synchronous attention inside its gates; the single-step cell consumes one
step and uses graph convolution. Both carry hidden state shaped like their
input block and start from zeros.
"""
from __future__ import annotations

import torch
from torch import nn

from .attention import AttentionParams, multi_head_group, stsatt
from .conv import NodeAdaptiveWeights, apgcn, graph_conv_core
from .numeric import DTYPE, ConfigError, ShapeError, expect_shape, sigmoid, tanh


class GraphConvTransform(nn.Module):
    """Gate transform for the single-step cell: (..., P, N, d_in) -> (..., P, N, d_out)."""

    def __init__(self, embed_dim: int, K: int, d_in: int, d_out: int, *,
                 generator: torch.Generator | None = None, dtype: torch.dtype = DTYPE):
        super().__init__()
        self.gcn = NodeAdaptiveWeights(embed_dim, K, d_in, d_out, generator=generator, dtype=dtype)

    def forward(self, x, stack, emb):
        return apgcn(x, stack, emb, self.gcn)


class SyncAttentionTransform(nn.Module):
    """Gate transform for the multi-step cell, operating on a time-major window.

    ``value="graph"`` is the synchronous attention; ``value="linear"`` swaps
    the graph-convolved value for a learned projection.
    """

    def __init__(self, embed_dim: int, K: int, d_in: int, d_out: int, heads: int, *,
                 value: str = "graph", generator: torch.Generator | None = None,
                 dtype: torch.dtype = DTYPE):
        super().__init__()
        if value not in ("graph", "linear"):
            raise ConfigError(f"unknown value mode {value!r}")
        if value == "graph":
            self.gcn = NodeAdaptiveWeights(embed_dim, K, d_in, d_out, generator=generator, dtype=dtype)
        else:
            self.gcn = None
        self.att = AttentionParams(d_in, d_out, heads, value_projection=value == "linear",
                                   generator=generator, dtype=dtype)

    def forward(self, x, stack, emb):
        node_major = x.transpose(-3, -2)
        return stsatt(node_major, stack, emb, self.gcn, self.att).transpose(-3, -2)


class GruGateParams(nn.Module):
    """Three independent gate transforms: update, reset, candidate."""

    def __init__(self, make_transform):
        super().__init__()
        self.update = make_transform()
        self.reset = make_transform()
        self.candidate = make_transform()


def _gru_step(x, h_prev, stack, emb, params: GruGateParams):
    xh = torch.cat([x, h_prev], dim=-1)
    z = sigmoid(params.update(xh, stack, emb))
    r = sigmoid(params.reset(xh, stack, emb))
    cand = tanh(params.candidate(torch.cat([x, r * h_prev], dim=-1), stack, emb))
    return z * h_prev + (1.0 - z) * cand


def ms_gru_cell(x_win: torch.Tensor, h_prev: torch.Tensor, stack: torch.Tensor,
                emb: torch.Tensor, params: GruGateParams) -> torch.Tensor:
    """One window step. x_win: (..., s, N, feat); h_prev: (..., s, N, hidden)."""
    if x_win.shape[:-1] != h_prev.shape[:-1]:
        raise ShapeError(f"window input {tuple(x_win.shape)} and state {tuple(h_prev.shape)} disagree")
    return _gru_step(x_win, h_prev, stack, emb, params)


def ss_gru_cell(x: torch.Tensor, h_prev: torch.Tensor, stack: torch.Tensor,
                emb: torch.Tensor, params: GruGateParams) -> torch.Tensor:
    """One time step. x: (..., 1, N, feat); h_prev: (..., 1, N, hidden)."""
    if x.dim() < 3 or x.shape[-3] != 1:
        raise ShapeError(f"single-step cell expects a length-1 time axis, got {tuple(x.shape)}")
    if x.shape[:-1] != h_prev.shape[:-1]:
        raise ShapeError(f"step input {tuple(x.shape)} and state {tuple(h_prev.shape)} disagree")
    return _gru_step(x, h_prev, stack, emb, params)


def _position_weights(transforms, embs):
    """Node parameters for every position, gate groups concatenated on the output axis."""
    gcns = [t.gcn for t in transforms]
    if gcns[0] is None:
        return None
    weight = torch.cat([g.weight for g in gcns], dim=-1) if len(gcns) > 1 else gcns[0].weight
    bias = torch.cat([g.bias for g in gcns], dim=-1) if len(gcns) > 1 else gcns[0].bias
    theta = (embs @ weight.flatten(1)).unflatten(-1, (-1, weight.shape[-1]))
    # unbind: indexing per position would zero-fill the full gradient at every step
    return list(zip(theta.unbind(0), (embs @ bias).unbind(0)))


def _apply_group(transforms, prepared, x, stack, p):
    """Evaluate gate transforms that share the input ``x`` (B, S, N, d_in)."""
    widths = [t.gcn.d_out if t.gcn is not None else t.att.d_out for t in transforms]
    if prepared is not None:
        theta, beta = prepared[p]
        value = graph_conv_core(x, stack, theta, beta)
    else:
        value = x @ torch.cat([t.att.value for t in transforms], dim=-1)
    if isinstance(transforms[0], GraphConvTransform):
        return value.split(widths, dim=-1)
    node_major = x.transpose(1, 2)
    outs = multi_head_group(node_major, value.transpose(1, 2), [t.att for t in transforms])
    return [o.transpose(1, 2) for o in outs]


def run_layer(seq: torch.Tensor, kind: str, stride: int, stacks: torch.Tensor,
              embs: torch.Tensor, params: GruGateParams, hidden_dim: int) -> torch.Tensor:
    """Scan a cell left to right over ``seq`` (..., T, N, feat).

    ``stacks`` (K x P x N x N) and ``embs`` (P x N x d) hold one graph
    position per block, P = T / stride. Returns (..., T, N, hidden_dim).

    Same arithmetic as chaining ``ms_gru_cell``/``ss_gru_cell``, but node
    parameters are generated once per position and the update and reset
    gates, which read the same input, are evaluated together.
    """
    if kind not in ("SS", "MS"):
        raise ConfigError(f"unknown layer kind {kind!r}")
    if kind == "SS" and stride != 1:
        raise ConfigError("single-step layers use stride 1")
    T = seq.shape[-3]
    if stride < 1 or T % stride:
        raise ConfigError(f"sequence length {T} is not divisible by stride {stride}")
    positions = T // stride
    if stacks.shape[1] != positions or embs.shape[0] != positions:
        raise ShapeError(f"graph banks have {stacks.shape[1]} positions, layer needs {positions}")
    n = stacks.shape[-1]
    expect_shape(seq, (T, n, None), "layer input")
    if not torch.equal(stacks[0], torch.eye(n, dtype=stacks.dtype).expand(positions, n, n)):
        raise ShapeError("Chebyshev stack term 0 must be the identity")
    lead = seq.shape[:-3]
    x = seq.reshape(-1, T, n, seq.shape[-1])
    zr = [params.update, params.reset]
    cand = [params.candidate]
    prep_zr = _position_weights(zr, embs)
    prep_c = _position_weights(cand, embs)
    h = x.new_zeros(x.shape[0], stride, n, hidden_dim)
    outputs = []
    blocks = x.split(stride, dim=1)
    for p, stack in enumerate(stacks.unbind(1)):
        block = blocks[p]
        z, r = _apply_group(zr, prep_zr, torch.cat([block, h], dim=-1), stack, p)
        z, r = sigmoid(z), sigmoid(r)
        (c,) = _apply_group(cand, prep_c, torch.cat([block, r * h], dim=-1), stack, p)
        h = z * h + (1.0 - z) * tanh(c)
        outputs.append(h)
    out = torch.cat(outputs, dim=1)
    return out.reshape(*lead, *out.shape[1:])
