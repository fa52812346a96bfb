"""Slow, loop-based reference implementations used only by tests."""

import math

import numpy as np


def naive_matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def naive_softmax(x, valid=None):
    x = [float(v) for v in x]
    valid = [True] * len(x) if valid is None else list(valid)
    top = max(v for v, ok in zip(x, valid) if ok)
    e = [math.exp(v - top) if ok else 0.0 for v, ok in zip(x, valid)]
    s = sum(e)
    return np.array([v / s for v in e])


def naive_attention(q_in, kv_in, wq, wk, wv, wo, heads, valid=None):
    q_in = np.asarray(q_in, np.float64)
    kv_in = np.asarray(kv_in, np.float64)
    Q = naive_matmul(q_in, wq)
    K = naive_matmul(kv_in, wk)
    V = naive_matmul(kv_in, wv)
    d = Q.shape[1]
    dh = d // heads
    lq, t = Q.shape[0], K.shape[0]
    concat = np.zeros((lq, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(lq):
            scores = []
            for j in range(t):
                s = 0.0
                for c in range(dh):
                    s += Q[i, sl][c] * K[j, sl][c]
                scores.append(s / math.sqrt(dh))
            w = naive_softmax(scores, valid)
            for j in range(t):
                concat[i, sl] += w[j] * V[j, sl]
    return naive_matmul(concat, wo)


def naive_layer_norm(x, gamma, beta, eps):
    x = np.asarray(x, np.float64)
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[i] = [(v - mu) / math.sqrt(var + eps) * g + b for v, g, b in zip(row, gamma, beta)]
    return out


def naive_dft_power(frame, nfft):
    x = list(np.asarray(frame, np.float64)) + [0.0] * (nfft - len(frame))
    out = []
    for k in range(nfft // 2 + 1):
        re = im = 0.0
        for n, v in enumerate(x):
            ang = -2.0 * math.pi * k * n / nfft
            re += v * math.cos(ang)
            im += v * math.sin(ang)
        out.append(re * re + im * im)
    return np.array(out)


def direct_bce(z, y):
    z = np.asarray(z, np.float64)
    y = np.asarray(y, np.float64)
    s = 1.0 / (1.0 + np.exp(-z))
    return float(np.mean(-(y * np.log(s) + (1 - y) * np.log(1 - s))))


def closed_form_tiny(m, x):
    """C=1, L=1, h=1, n_b=0: one query attends over frames, then LN and the head."""
    d = m.config.model_dim
    T = x.shape[0]
    pe = np.zeros((T, d))
    for t in range(T):
        for i in range(0, d, 2):
            angle = t / 10000.0 ** (i / d)
            pe[t, i], pe[t, i + 1] = math.sin(angle), math.cos(angle)
    e = x @ m.input_proj.weight.data + m.input_proj.bias.data + pe
    q = m.latents.data[0, 0]
    a = m.cross.attn
    qv, K, V = q @ a.wq.data, e @ a.wk.data, e @ a.wv.data
    s = K @ qv / math.sqrt(d)
    w = np.exp(s - s.max())
    w /= w.sum()
    h = q + (w @ V) @ a.wo.data
    n = m.cross.norm1
    h = (h - h.mean()) / math.sqrt(h.var() + n.eps) * n.gamma.data + n.beta.data
    r = np.maximum(h @ m.w1.data + m.b1.data, 0)
    return float(r @ m.w2.data + m.b2.data)
