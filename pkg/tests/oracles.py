"""Scalar-loop reference implementations.

Plain Python floats and explicit loops only, so they share no code path with
the torch implementations they check. Arrays come in as nested lists or numpy
arrays and go out as numpy arrays.
"""
import math

import numpy as np


def softmax_row(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def layer_norm(v, gain, bias, eps=1e-5):
    d = len(v)
    mean = sum(v) / d
    var = sum((x - mean) ** 2 for x in v) / d
    return [gain[i] * (v[i] - mean) / math.sqrt(var + eps) + bias[i] for i in range(d)]


def laplacian(node, pos, gain, bias, eps=1e-5):
    """softmax_rows(E E^T) with E[n] = layer_norm(node[n] + pos)."""
    N, d = len(node), len(node[0])
    pos = [0.0] * d if pos is None else list(pos)
    E = [layer_norm([node[n][e] + pos[e] for e in range(d)], gain, bias, eps) for n in range(N)]
    gram = [[sum(E[i][e] * E[j][e] for e in range(d)) for j in range(N)] for i in range(N)]
    return np.array([softmax_row(row) for row in gram])


def matmul(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def apgcn(x, stack, emb, W, b):
    """x: P x N x d_in, stack: K x N x N, emb: N x d, W: d x K x d_in x d_out, b: d x d_out."""
    x, stack, emb, W, b = map(np.asarray, (x, stack, emb, W, b))
    P, N, d_in = x.shape
    K = stack.shape[0]
    d, d_out = b.shape
    out = np.zeros((P, N, d_out))
    for t in range(P):
        for n in range(N):
            for o in range(d_out):
                acc = 0.0
                for e in range(d):
                    acc += emb[n, e] * b[e, o]
                for k in range(K):
                    for m in range(N):
                        for i in range(d_in):
                            theta = 0.0
                            for e in range(d):
                                theta += emb[n, e] * W[e, k, i, o]
                            acc += stack[k, n, m] * x[t, m, i] * theta
                out[t, n, o] = acc
    return out


def temporal_attention(q, k, v):
    """q, k, v: N x s x d_h."""
    q, k, v = map(np.asarray, (q, k, v))
    N, s, dh = q.shape
    out = np.zeros((N, s, dh))
    for n in range(N):
        for t in range(s):
            scores = [sum(q[n, t, c] * k[n, u, c] for c in range(dh)) / math.sqrt(dh) for u in range(s)]
            w = softmax_row(scores)
            for c in range(dh):
                out[n, t, c] = sum(w[u] * v[n, u, c] for u in range(s))
    return out


def project(x, W):
    """x: N x s x a, W: a x b -> N x s x b."""
    x, W = np.asarray(x), np.asarray(W)
    N, s, a = x.shape
    out = np.zeros((N, s, W.shape[1]))
    for n in range(N):
        for t in range(s):
            for j in range(W.shape[1]):
                out[n, t, j] = sum(x[n, t, i] * W[i, j] for i in range(a))
    return out


def stsatt(x, stack, emb, W, b, Wq, Wk, Wo, Wv=None):
    """x: N x s x d_in (node-major). Wq, Wk: h x d_in x d_h."""
    x = np.asarray(x)
    h, _, dh = np.asarray(Wq).shape
    if Wv is None:
        value = apgcn(x.transpose(1, 0, 2), stack, emb, W, b).transpose(1, 0, 2)
    else:
        value = project(x, Wv)
    heads = []
    for j in range(h):
        q = project(x, Wq[j])
        k = project(x, Wk[j])
        heads.append(temporal_attention(q, k, value[:, :, j * dh:(j + 1) * dh]))
    concat = np.concatenate(heads, axis=-1)
    return project(concat, Wo)


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def gru_cell(x, h_prev, gate):
    """x: S x N x feat, h_prev: S x N x hid; gate(name, inp) -> S x N x hid."""
    x, h_prev = np.asarray(x), np.asarray(h_prev)
    xh = np.concatenate([x, h_prev], axis=-1)
    z = np.vectorize(sigmoid)(gate("update", xh))
    r = np.vectorize(sigmoid)(gate("reset", xh))
    cand = np.tanh(gate("candidate", np.concatenate([x, r * h_prev], axis=-1)))
    out = np.zeros_like(h_prev)
    for idx in np.ndindex(out.shape):
        out[idx] = z[idx] * h_prev[idx] + (1.0 - z[idx]) * cand[idx]
    return out


def output_projection(h_last, gain, bias, W, b):
    """h_last: N x hid -> T' x N x 1."""
    h_last, W = np.asarray(h_last), np.asarray(W)
    N = h_last.shape[0]
    Tp = W.shape[1]
    out = np.zeros((Tp, N, 1))
    for n in range(N):
        y = layer_norm(list(h_last[n]), gain, bias)
        for t in range(Tp):
            out[t, n, 0] = sum(y[i] * W[i, t] for i in range(len(y))) + b[t]
    return out
