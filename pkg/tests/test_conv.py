import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from msstrn.conv import NodeAdaptiveWeights, apgcn
from msstrn.graph import chebyshev_stack
from msstrn.numeric import ShapeError, grad_check

F64 = torch.float64


def gen(seed):
    return torch.Generator().manual_seed(seed)


def random_stack(N, K, seed):
    a = torch.rand(N, N, generator=gen(seed), dtype=F64)
    return chebyshev_stack(a / a.sum(-1, keepdim=True), K)


def randomized_weights(d, K, d_in, d_out, seed):
    w = NodeAdaptiveWeights(d, K, d_in, d_out, generator=gen(seed))
    with torch.no_grad():
        w.bias.normal_(generator=gen(seed + 1))
    return w


def test_zero_pools_give_zero_output():
    w = NodeAdaptiveWeights(3, 2, 2, 4)
    with torch.no_grad():
        w.weight.zero_()
    x = torch.randn(5, 3, 2, dtype=F64)
    assert torch.equal(apgcn(x, random_stack(3, 2, 0), torch.randn(3, 3, dtype=F64), w), torch.zeros(5, 3, 4, dtype=F64))


def test_bias_only_path():
    w = randomized_weights(3, 2, 2, 4, 0)
    emb = torch.randn(3, 3, generator=gen(1), dtype=F64)
    out = apgcn(torch.zeros(4, 3, 2, dtype=F64), random_stack(3, 2, 2), emb, w)
    expected = emb @ w.bias
    for t in range(4):
        assert torch.allclose(out[t], expected, atol=1e-14)


@pytest.mark.parametrize("N,d,K,d_in,d_out,P", [(2, 1, 2, 1, 1, 1), (2, 1, 2, 2, 3, 2), (3, 3, 3, 3, 2, 3)])
def test_matches_scalar_loop(N, d, K, d_in, d_out, P):
    w = randomized_weights(d, K, d_in, d_out, 3)
    x = torch.randn(P, N, d_in, generator=gen(4), dtype=F64)
    emb = torch.randn(N, d, generator=gen(5), dtype=F64)
    stack = random_stack(N, K, 6)
    expected = oracles.apgcn(x.numpy(), stack.numpy(), emb.numpy(), w.weight.detach().numpy(), w.bias.detach().numpy())
    np.testing.assert_allclose(apgcn(x, stack, emb, w).detach().numpy(), expected, atol=1e-9)


def test_batched_leading_axes():
    w = randomized_weights(2, 2, 2, 3, 0)
    x = torch.randn(2, 3, 4, 3, 2, dtype=F64)
    stack, emb = random_stack(3, 2, 1), torch.randn(3, 2, dtype=F64)
    out = apgcn(x, stack, emb, w)
    assert out.shape == (2, 3, 4, 3, 3)
    assert torch.allclose(out[1, 2], apgcn(x[1, 2], stack, emb, w), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(alpha=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_linear_without_bias(alpha, seed):
    w = NodeAdaptiveWeights(2, 3, 2, 3, generator=gen(seed))
    stack, emb = random_stack(4, 3, seed), torch.randn(4, 2, generator=gen(seed), dtype=F64)
    x1 = torch.randn(2, 4, 2, generator=gen(seed + 1), dtype=F64)
    x2 = torch.randn(2, 4, 2, generator=gen(seed + 2), dtype=F64)
    lhs = apgcn(alpha * x1 + x2, stack, emb, w)
    rhs = alpha * apgcn(x1, stack, emb, w) + apgcn(x2, stack, emb, w)
    assert torch.allclose(lhs, rhs, atol=1e-8)


def test_identity_configuration():
    N, d_in = 3, 2
    w = NodeAdaptiveWeights(1, 2, d_in, d_in)
    with torch.no_grad():
        w.weight.copy_(0.5 * torch.eye(d_in, dtype=F64).expand(1, 2, d_in, d_in))
    eye = torch.eye(N, dtype=F64)
    x = torch.randn(2, N, d_in, dtype=F64)
    out = apgcn(x, torch.stack([eye, eye]), torch.ones(N, 1, dtype=F64), w)
    assert torch.allclose(out, x, atol=1e-8)


def test_rejects_non_identity_first_term():
    w = NodeAdaptiveWeights(2, 2, 1, 1)
    stack = random_stack(3, 2, 0).clone()
    stack[0, 0, 1] = 1e-3
    with pytest.raises(ShapeError):
        apgcn(torch.zeros(1, 3, 1, dtype=F64), stack, torch.zeros(3, 2, dtype=F64), w)


def test_shape_errors():
    w = NodeAdaptiveWeights(2, 2, 1, 1)
    stack = random_stack(3, 2, 0)
    with pytest.raises(ShapeError):
        apgcn(torch.zeros(1, 3, 2, dtype=F64), stack, torch.zeros(3, 2, dtype=F64), w)
    with pytest.raises(ShapeError):
        apgcn(torch.zeros(1, 3, 1, dtype=F64), random_stack(3, 3, 0), torch.zeros(3, 2, dtype=F64), w)
    with pytest.raises(ShapeError):
        apgcn(torch.zeros(1, 3, 1, dtype=F64), stack, torch.zeros(3, 4, dtype=F64), w)


def test_gradients_for_pools_input_and_embedding():
    w = randomized_weights(3, 2, 2, 3, 8)
    x = torch.randn(2, 3, 2, generator=gen(9), dtype=F64, requires_grad=True)
    emb = torch.randn(3, 3, generator=gen(10), dtype=F64, requires_grad=True)
    red = torch.randn(2, 3, 3, generator=gen(11), dtype=F64)
    stack = random_stack(3, 2, 12)
    f = lambda: (apgcn(x, stack, emb, w) * red).sum()
    params = list(w.named_parameters()) + [("x", x), ("emb", emb)]
    assert grad_check(f, params, eps=1e-3, points=4) < 1e-4
