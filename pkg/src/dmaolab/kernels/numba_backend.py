"""Numba-jitted implementations of the hot inner loops.

No parallel targets and no fastmath: results must be reproducible
bit-for-bit across runs on the same machine.
"""
import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _lae(a, b):
    # log(exp(a) + exp(b)) without overflow; tolerates -inf operands
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


@njit(cache=True)
def ctc_alpha_beta(logp, ext):
    T = logp.shape[0]
    S2 = ext.shape[0]

    alpha = np.full((T, S2), NEG_INF)
    alpha[0, 0] = logp[0, ext[0]]
    if S2 > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        for s in range(S2):
            acc = alpha[t - 1, s]
            if s >= 1:
                acc = _lae(acc, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                acc = _lae(acc, alpha[t - 1, s - 2])
            alpha[t, s] = acc + logp[t, ext[s]]

    beta = np.full((T, S2), NEG_INF)
    beta[T - 1, S2 - 1] = 0.0
    if S2 > 1:
        beta[T - 1, S2 - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S2):
            acc = beta[t + 1, s] + logp[t + 1, ext[s]]
            if s + 1 < S2:
                acc = _lae(acc, beta[t + 1, s + 1] + logp[t + 1, ext[s + 1]])
            if s + 2 < S2 and ext[s + 2] != 0 and ext[s + 2] != ext[s]:
                acc = _lae(acc, beta[t + 1, s + 2] + logp[t + 1, ext[s + 2]])
            beta[t, s] = acc

    if S2 > 1:
        loglik = _lae(alpha[T - 1, S2 - 1], alpha[T - 1, S2 - 2])
    else:
        loglik = alpha[T - 1, 0]
    return alpha, beta, loglik


@njit(cache=True)
def ctc_grad(logp, ext, alpha, beta, loglik):
    T, V1 = logp.shape
    S2 = ext.shape[0]
    occ = np.full((T, V1), NEG_INF)
    for t in range(T):
        for s in range(S2):
            v = ext[s]
            occ[t, v] = _lae(occ[t, v], alpha[t, s] + beta[t, s])
    grad = np.empty((T, V1))
    for t in range(T):
        for v in range(V1):
            if occ[t, v] == NEG_INF:
                grad[t, v] = 0.0
            else:
                grad[t, v] = -math.exp(occ[t, v] - loglik)
    return grad


@njit(cache=True)
def depthwise_conv1d_forward(x, w):
    T, C = x.shape
    k = w.shape[0]
    r = k // 2
    y = np.zeros_like(x)
    for t in range(T):
        for j in range(k):
            src = t + j - r
            if 0 <= src < T:
                for c in range(C):
                    y[t, c] += x[src, c] * w[j, c]
    return y


@njit(cache=True)
def depthwise_conv1d_backward(x, w, gy):
    T, C = x.shape
    k = w.shape[0]
    r = k // 2
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for t in range(T):
        for j in range(k):
            src = t + j - r
            if 0 <= src < T:
                for c in range(C):
                    gx[src, c] += gy[t, c] * w[j, c]
                    gw[j, c] += gy[t, c] * x[src, c]
    return gx, gw


@njit(cache=True)
def levenshtein(a, b):
    n = a.shape[0]
    m = b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            if prev[j - 1] + cost < best:
                best = prev[j - 1] + cost
            cur[j] = best
        for j in range(m + 1):
            tmp = prev[j]
            prev[j] = cur[j]
            cur[j] = tmp
    return int(prev[m])
