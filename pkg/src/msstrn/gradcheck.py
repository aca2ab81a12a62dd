"""Finite-difference gradient checks for every module, at a given model configuration."""
from __future__ import annotations

import dataclasses
import time

import torch

from .attention import AttentionParams, stsatt
from .conv import NodeAdaptiveWeights, apgcn
from .graph import EmbeddingBank, build_graph_banks, single_step_laplacian
from .model import ModelConfig, OutputHead, build_model, l1_loss, output_projection
from .numeric import DTYPE, grad_errors
from .recurrent import GraphConvTransform, GruGateParams, SyncAttentionTransform, ms_gru_cell, run_layer, ss_gru_cell

TINY = ModelConfig(num_nodes=4, input_len=4, output_len=2, window=2, embed_dim=3,
                   hidden_dim=4, cheb_k=2, heads=1, stack="MS-SS")


def _randomize(module: torch.nn.Module, gen: torch.Generator, scale: float = 0.5) -> None:
    # move zero-initialized biases and unit gains off their special values
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))


def _leaf(shape, gen, scale=1.0):
    return (scale * torch.randn(*shape, generator=gen, dtype=DTYPE)).requires_grad_()


def _reduction(shape, gen):
    weights = torch.randn(*shape, generator=gen, dtype=DTYPE)
    return lambda out: (out * weights).sum()


def _with_inputs(module, **tensors):
    named = [(f"param:{n}", p) for n, p in module.named_parameters() if p.requires_grad]
    return named + [(f"input:{n}", t) for n, t in tensors.items()]


def module_checks(cfg: ModelConfig = TINY, seed: int = 0, eps: float = 1e-3,
                  points: int = 4) -> dict[str, dict[str, float]]:
    """Per-module gradient errors: ``{check name: {tensor name: max rel err}}``."""
    gen = torch.Generator().manual_seed(seed)
    N, d, K, hid, s = cfg.num_nodes, cfg.embed_dim, cfg.cheb_k, cfg.hidden_dim, cfg.window
    results = {}

    bank = EmbeddingBank(N, d, cfg.input_len, s, generator=gen)
    _randomize(bank, gen)
    red = _reduction((N, N), gen)
    results["single_step_laplacian"] = grad_errors(lambda: red(single_step_laplacian(bank, 1)), bank, eps, points)

    banks = build_graph_banks(bank, K)
    stack = banks.window_stack[:, 0].detach()
    emb_leaf = banks.window_emb[0].detach().clone().requires_grad_()

    w = NodeAdaptiveWeights(d, K, 3, hid, generator=gen)
    _randomize(w, gen)
    x = _leaf((s, N, 3), gen)
    red = _reduction((s, N, hid), gen)
    results["apgcn"] = grad_errors(lambda: red(apgcn(x, stack, emb_leaf, w)),
                                   _with_inputs(w, x=x, embedding=emb_leaf), eps, points)

    w_gcn = NodeAdaptiveWeights(d, K, 3, hid, generator=gen)
    w_att = AttentionParams(3, hid, cfg.heads, generator=gen)
    _randomize(w_gcn, gen)
    xn = _leaf((N, s, 3), gen)
    red = _reduction((N, s, hid), gen)
    results["stsatt"] = grad_errors(
        lambda: red(stsatt(xn, stack, emb_leaf, w_gcn, w_att)),
        [(f"gcn:{n}", p) for n, p in w_gcn.named_parameters()]
        + [(f"att:{n}", p) for n, p in w_att.named_parameters() if p is not None]
        + [("input:x", xn)], eps, points)

    feat = cfg.input_dim
    ms = GruGateParams(lambda: SyncAttentionTransform(d, K, feat + hid, hid, cfg.heads, generator=gen))
    _randomize(ms, gen)
    xw, hw = _leaf((s, N, feat), gen), _leaf((s, N, hid), gen, 0.5)
    red = _reduction((s, N, hid), gen)
    results["ms_gru_cell"] = grad_errors(lambda: red(ms_gru_cell(xw, hw, stack, emb_leaf, ms)),
                                         _with_inputs(ms, x=xw, h=hw), eps, points)

    ss = GruGateParams(lambda: GraphConvTransform(d, K, feat + hid, hid, generator=gen))
    _randomize(ss, gen)
    step_stack = banks.step_stack[:, 0].detach()
    step_emb = banks.step_emb[0].detach()
    x1, h1 = _leaf((1, N, feat), gen), _leaf((1, N, hid), gen, 0.5)
    red = _reduction((1, N, hid), gen)
    results["ss_gru_cell"] = grad_errors(lambda: red(ss_gru_cell(x1, h1, step_stack, step_emb, ss)),
                                         _with_inputs(ss, x=x1, h=h1), eps, points)

    seq = _leaf((2, N, feat), gen)
    red = _reduction((2, N, hid), gen)
    two_stacks = banks.step_stack[:, :2].detach()
    two_embs = banks.step_emb[:2].detach()
    results["two_step_scan"] = grad_errors(
        lambda: red(run_layer(seq, "SS", 1, two_stacks, two_embs, ss, hid)),
        _with_inputs(ss, seq=seq), eps, points)

    head = OutputHead(hid, cfg.output_len, generator=gen)
    _randomize(head, gen)
    h_last = _leaf((N, hid), gen)
    red = _reduction((cfg.output_len, N, 1), gen)
    results["output_projection"] = grad_errors(lambda: red(output_projection(h_last, head)),
                                               _with_inputs(head, h_last=h_last), eps, points)
    return results


def model_check(cfg: ModelConfig = TINY, batch: int = 1, seed: int = 0, eps: float = 1e-3,
                points: int = 4) -> dict[str, float]:
    """End-to-end L1-loss gradient errors for every trainable model parameter.

    The target is placed at least 0.5 away from the initial prediction in every
    entry, so the loss is differentiable throughout the finite-difference stencil.
    """
    gen = torch.Generator().manual_seed(seed)
    model = build_model(dataclasses.replace(cfg), dtype=DTYPE)
    _randomize(model, gen, scale=0.3)
    x = torch.randn(batch, cfg.input_len, cfg.num_nodes, cfg.input_dim, generator=gen, dtype=DTYPE)
    with torch.no_grad():
        pred = model(x)
    offset = 0.5 + 0.5 * torch.rand(pred.shape, generator=gen, dtype=DTYPE)
    sign = torch.where(torch.rand(pred.shape, generator=gen, dtype=DTYPE) < 0.5, -1.0, 1.0)
    truth = pred + sign * offset
    return grad_errors(lambda: l1_loss(model(x), truth), model, eps, points)


def gradient_suite(cfg: ModelConfig = TINY, seed: int = 0, eps: float = 1e-3, points: int = 4) -> dict:
    """Run every module check plus the end-to-end check.

    The default fourth-order stencil with a 1e-3 step keeps the finite-difference
    error near 1e-6 even on gradient entries of order 1e-9, where the two-point
    stencil is limited by float64 roundoff in the loss.
    """
    start = time.perf_counter()
    modules = module_checks(cfg, seed, eps, points)
    model = model_check(cfg, seed=seed, eps=eps, points=points)
    per_check = {name: max(errs.values()) for name, errs in modules.items()}
    per_check["model"] = max(model.values())
    return {
        "max_rel_err": max(per_check.values()),
        "per_check": per_check,
        "model_params": model,
        "seconds": time.perf_counter() - start,
    }
