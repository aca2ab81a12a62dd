"""Node-adaptive Chebyshev graph convolution over generated graph stacks."""
from __future__ import annotations

import math

import torch
from torch import nn

from .graph import uniform_
from .numeric import DTYPE, ConfigError, ShapeError, expect_shape


class NodeAdaptiveWeights(nn.Module):
    """Weight pool ``d x K x d_in x d_out`` and bias pool ``d x d_out``.

    Per-node parameters are generated by contracting a node embedding
    (``N x d``) against the pools.
    """

    def __init__(self, embed_dim: int, K: int, d_in: int, d_out: int, *,
                 generator: torch.Generator | None = None, dtype: torch.dtype = DTYPE):
        super().__init__()
        if min(embed_dim, d_in, d_out) < 1 or K < 2:
            raise ConfigError("NodeAdaptiveWeights needs positive dims and K >= 2")
        if generator is None:
            generator = torch.Generator().manual_seed(0)
        self.embed_dim, self.K, self.d_in, self.d_out = embed_dim, K, d_in, d_out
        bound = 1.0 / math.sqrt(K * d_in)
        self.weight = nn.Parameter(uniform_(torch.empty(embed_dim, K, d_in, d_out, dtype=dtype), bound, generator))
        self.bias = nn.Parameter(torch.zeros(embed_dim, d_out, dtype=dtype))

    def node_parameters(self, emb: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-node weights (..., N, K, d_in, d_out) and biases (..., N, d_out)."""
        expect_shape(emb, (None, self.embed_dim), "node embedding")
        theta = (emb @ self.weight.flatten(1)).unflatten(-1, self.weight.shape[1:])
        beta = emb @ self.bias
        return theta, beta


def graph_conv_core(x: torch.Tensor, stack: torch.Tensor, theta: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Diffuse ``x`` (B, P, N, d_in) by each term of ``stack`` and apply per-node weights.

    ``theta`` is N x (K*d_in) x D with the Chebyshev index major, ``beta`` N x D.
    """
    B, P, n, d_in = x.shape
    K = stack.shape[0]
    diffused = stack.unsqueeze(1) @ x.reshape(1, B * P, n, d_in)  # K, BP, N, d_in
    diffused = diffused.permute(2, 1, 0, 3).reshape(n, B * P, K * d_in)
    out = torch.bmm(diffused, theta).transpose(0, 1) + beta
    return out.reshape(B, P, n, -1)


def apgcn(x: torch.Tensor, stack: torch.Tensor, emb: torch.Tensor, w: NodeAdaptiveWeights) -> torch.Tensor:
    """Graph-convolve a block of P time slices that share one graph position.

    Args:
        x: signal of shape (..., P, N, d_in).
        stack: Chebyshev terms K x N x N; ``stack[0]`` must be the identity.
        emb: node embedding slice N x d for this position.
        w: the weight/bias pools.

    Returns:
        (..., P, N, d_out)
    """
    n = stack.shape[-1]
    if stack.shape != (w.K, n, n):
        raise ShapeError(f"stack shape {tuple(stack.shape)} does not match K={w.K}")
    expect_shape(x, (None, n, w.d_in), "apgcn input")
    expect_shape(emb, (n, w.embed_dim), "apgcn embedding")
    if x.dim() < 3:
        raise ShapeError(f"apgcn input needs a time axis, got {tuple(x.shape)}")
    if not torch.equal(stack[0], torch.eye(n, dtype=stack.dtype, device=stack.device)):
        raise ShapeError("Chebyshev stack term 0 must be the identity")
    theta, beta = w.node_parameters(emb)
    lead = x.shape[:-3]
    out = graph_conv_core(x.reshape(-1, *x.shape[-3:]), stack, theta.flatten(1, 2), beta)
    return out.reshape(*lead, *out.shape[-3:])
