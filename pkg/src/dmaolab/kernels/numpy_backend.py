"""Pure-numpy reference implementations of the hot inner loops.

Same signatures as the numba backend; the time loops stay in Python but
everything per-frame is vectorized. Used when DMAOLAB_BACKEND=numpy or
when numba is unavailable.
"""
import numpy as np

NEG_INF = -np.inf


def ctc_alpha_beta(logp, ext):
    """Log-space forward/backward tables over the blank-extended labels.

    logp: [T, V+1] float64 log-probabilities, ext: [2S+1] int64 with blanks
    (0) interleaved. Returns (alpha, beta, loglik). alpha[t, s] covers
    emissions 0..t, beta[t, s] covers t+1..T-1, so alpha+beta cut at any t
    logsumexps to loglik.
    """
    T = logp.shape[0]
    S2 = ext.shape[0]
    em = logp[:, ext]

    skip = np.zeros(S2, dtype=bool)
    if S2 > 2:
        skip[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S2), NEG_INF, dtype=np.float64)
    alpha[0, 0] = em[0, 0]
    if S2 > 1:
        alpha[0, 1] = em[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if S2 > 2:
            acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + em[t]

    beta = np.full((T, S2), NEG_INF, dtype=np.float64)
    beta[T - 1, S2 - 1] = 0.0
    if S2 > 1:
        beta[T - 1, S2 - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + em[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if S2 > 2:
            acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc

    if S2 > 1:
        loglik = np.logaddexp(alpha[T - 1, S2 - 1], alpha[T - 1, S2 - 2])
    else:
        loglik = alpha[T - 1, 0]
    return alpha, beta, float(loglik)


def ctc_grad(logp, ext, alpha, beta, loglik):
    """Gradient of -loglik w.r.t. the unconstrained logp entries."""
    T, V1 = logp.shape
    S2 = ext.shape[0]
    occ = np.full((T, V1), NEG_INF, dtype=np.float64)
    cut = alpha + beta
    for s in range(S2):
        v = ext[s]
        occ[:, v] = np.logaddexp(occ[:, v], cut[:, s])
    grad = -np.exp(occ - loglik)
    return grad


def depthwise_conv1d_forward(x, w):
    """Per-channel temporal convolution, zero-padded to same length.

    x: [T, C], w: [k, C] with odd k.
    """
    T, C = x.shape
    k = w.shape[0]
    r = k // 2
    y = np.zeros_like(x)
    for j in range(k):
        d = j - r
        t0 = max(0, -d)
        t1 = min(T, T - d)
        if t1 > t0:
            y[t0:t1] += x[t0 + d:t1 + d] * w[j]
    return y


def depthwise_conv1d_backward(x, w, gy):
    T, C = x.shape
    k = w.shape[0]
    r = k // 2
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    for j in range(k):
        d = j - r
        t0 = max(0, -d)
        t1 = min(T, T - d)
        if t1 > t0:
            gx[t0 + d:t1 + d] += gy[t0:t1] * w[j]
            gw[j] = (gy[t0:t1] * x[t0 + d:t1 + d]).sum(axis=0)
    return gx, gw


def levenshtein(a, b):
    """Edit distance between two int64 sequences."""
    n, m = a.shape[0], b.shape[0]
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return int(prev[m])
