"""Tensor primitives, error types, and the finite-difference gradient checker.

Arrays are torch tensors; reverse-mode differentiation is torch autograd.
Everything here works on the trailing axis so callers can carry any number
of leading batch/position axes.
"""
from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping
from typing import Union

import torch
from torch import nn

DTYPE = torch.float64


class MsstrnError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MsstrnError, ValueError):
    pass


class ShapeError(MsstrnError, ValueError):
    pass


class NumericError(MsstrnError, ArithmeticError):
    pass


def check_finite(t: torch.Tensor, where: str) -> torch.Tensor:
    if not bool(torch.isfinite(t).all()):
        raise NumericError(f"non-finite values in {where}")
    return t


def expect_shape(t: torch.Tensor, shape: tuple, name: str) -> None:
    """Raise ShapeError unless the trailing axes of ``t`` match ``shape``.

    ``None`` entries in ``shape`` match any size.
    """
    tail = tuple(t.shape[-len(shape):]) if shape else ()
    ok = t.dim() >= len(shape) and all(
        want is None or want == got for want, got in zip(shape, tail)
    )
    if not ok:
        raise ShapeError(f"{name}: expected trailing shape {shape}, got {tuple(t.shape)}")


def softmax_rows(m: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax over the last axis, shifted by the row max."""
    check_finite(m, "softmax input")
    return softmax_unchecked(m)


def softmax_unchecked(m: torch.Tensor) -> torch.Tensor:
    """softmax_rows without the finiteness check, for callers that check their own outputs."""
    shifted = m - m.amax(dim=-1, keepdim=True).detach()
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)


def layer_norm(v: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Normalize over the last axis using the population variance."""
    expect_shape(gain, (v.shape[-1],), "layer_norm gain")
    expect_shape(bias, (v.shape[-1],), "layer_norm bias")
    mean = v.mean(dim=-1, keepdim=True)
    centered = v - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    return gain * centered / torch.sqrt(var + eps) + bias


sigmoid = torch.sigmoid
tanh = torch.tanh


Params = Union[Mapping[str, torch.Tensor], nn.Module, Iterable[tuple[str, torch.Tensor]]]


def _named(params: Params) -> list[tuple[str, torch.Tensor]]:
    if isinstance(params, nn.Module):
        return [(n, p) for n, p in params.named_parameters() if p.requires_grad]
    if isinstance(params, Mapping):
        return list(params.items())
    return list(params)


def tape_gradients(f: Callable[[], torch.Tensor], params: Params) -> dict[str, torch.Tensor]:
    """Gradients of the scalar ``f()`` w.r.t. each tensor; unused ones get exact zeros."""
    named = _named(params)
    out = f()
    if out.numel() != 1:
        raise ShapeError(f"gradient target must be scalar, got shape {tuple(out.shape)}")
    check_finite(out, "gradient target")
    grads = torch.autograd.grad(out, [p for _, p in named], allow_unused=True)
    return {
        name: torch.zeros_like(p) if g is None else g.detach().clone()
        for (name, p), g in zip(named, grads)
    }


def _central_difference(f, flat, i, eps, points):
    orig = flat[i].item()
    values = {}
    offsets = (1, -1) if points == 2 else (1, -1, 2, -2)
    for k in offsets:
        flat[i] = orig + k * eps
        values[k] = f().item()
    flat[i] = orig
    if not all(abs(v) < float("inf") for v in values.values()):
        raise NumericError("non-finite objective during finite differencing")
    if points == 2:
        return (values[1] - values[-1]) / (2.0 * eps)
    return (8.0 * (values[1] - values[-1]) - (values[2] - values[-2])) / (12.0 * eps)


def grad_errors(f: Callable[[], torch.Tensor], params: Params, eps: float = 1e-6,
                points: int = 2) -> dict[str, float]:
    """Max relative error between tape and central-difference gradients, per tensor.

    The relative error of one entry is ``|a - n| / max(1e-8, |a| + |n|)``.
    ``points=2`` is the usual (f(x+e) - f(x-e)) / 2e; ``points=4`` uses the
    fourth-order central stencil, which tolerates a larger step and so loses
    less to roundoff on near-zero gradient entries. Tensors are perturbed in
    place and restored.
    """
    if points not in (2, 4):
        raise ValueError(f"points must be 2 or 4, got {points}")
    named = _named(params)
    analytic = tape_gradients(f, named)
    errors = {}
    with torch.no_grad():
        for name, p in named:
            flat = p.view(-1)
            a_flat = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.numel()):
                numeric = _central_difference(f, flat, i, eps, points)
                a = a_flat[i].item()
                rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, rel)
            errors[name] = worst
    return errors


def grad_check(f: Callable[[], torch.Tensor], params: Params, eps: float = 1e-6, points: int = 2) -> float:
    errors = grad_errors(f, params, eps, points)
    return max(errors.values(), default=0.0)
