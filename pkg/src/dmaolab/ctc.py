"""CTC loss (log-space forward-backward), a brute-force oracle, greedy
decoding and label error rate.

Blank is index 0 everywhere; labels use 1..vocab. The dynamic program
always runs in float64 regardless of the model dtype.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from . import kernels
from .errors import InfeasibleAlignment, InvalidInput, InvalidShape, OracleTooLarge
from .tensor import Tensor, _record

BLANK = 0


def _as_label_array(labels):
    arr = np.asarray(list(labels), dtype=np.int64)
    if arr.ndim != 1:
        raise InvalidInput("labels must be a flat sequence")
    if arr.size and arr.min() < 1:
        raise InvalidInput("labels must be >= 1 (0 is the blank)")
    return arr


def _extended(labels):
    ext = np.zeros(2 * labels.shape[0] + 1, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels) -> int:
    """Fewest frames that can emit the sequence (repeats force blanks)."""
    arr = _as_label_array(labels)
    repeats = int(np.sum(arr[1:] == arr[:-1])) if arr.size > 1 else 0
    return int(arr.size) + repeats


def _check_log_probs(data, labels):
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 2:
        raise InvalidShape(f"log_probs must be [T, vocab+1], got {data.shape}")
    arr = _as_label_array(labels)
    if arr.size and int(arr.max()) >= data.shape[1]:
        raise InvalidInput("label index exceeds vocab")
    # rows should be log-probabilities; loose tolerance admits finite
    # difference probes
    rows = np.logaddexp.reduce(data.astype(np.float64), axis=1)
    if np.max(np.abs(rows)) > 1e-3:
        raise InvalidInput("log_probs rows are not normalized")
    need = min_frames(arr)
    if data.shape[0] < need:
        raise InfeasibleAlignment(
            f"{data.shape[0]} frames cannot emit {arr.size} labels "
            f"(minimum {need})"
        )
    return arr


def ctc_tables(log_probs, labels):
    """(alpha, beta, loglik) in float64 for inspection and tests.

    alpha[t]+beta[t] logsumexps to loglik at every cut t.
    """
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    arr = _check_log_probs(data, labels)
    lp = np.ascontiguousarray(data, dtype=np.float64)
    return kernels.ctc_alpha_beta(lp, _extended(arr))


def ctc_loss(log_probs: Tensor, labels) -> Tensor:
    """Negative log-probability of the label sequence, differentiable
    w.r.t. log_probs."""
    arr = _check_log_probs(log_probs.data, labels)
    lp = np.ascontiguousarray(log_probs.data, dtype=np.float64)
    ext = _extended(arr)
    alpha, beta, loglik = kernels.ctc_alpha_beta(lp, ext)
    out = np.asarray(-loglik, dtype=log_probs.data.dtype)

    def bwd(g):
        grad = kernels.ctc_grad(lp, ext, alpha, beta, loglik)
        return ((g * grad).astype(log_probs.data.dtype, copy=False),)

    return _record("ctc_loss", (log_probs,), out, bwd)


def ctc_brute_force(log_probs, labels) -> float:
    """Enumerate every frame path and sum those that collapse to labels."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    if data.ndim != 2:
        raise InvalidShape(f"log_probs must be 2-d, got {data.shape}")
    T, V1 = data.shape
    if T > 8 or V1 - 1 > 4:
        raise OracleTooLarge(f"cannot enumerate {V1}^{T} paths")
    arr = _as_label_array(labels)
    need = min_frames(arr)
    if T < need:
        raise InfeasibleAlignment(
            f"{T} frames cannot emit {arr.size} labels (minimum {need})"
        )
    target = tuple(int(v) for v in arr)
    lp = data.astype(np.float64)
    total = 0.0
    for path in itertools.product(range(V1), repeat=T):
        if collapse(path) != target:
            continue
        s = 0.0
        for t, v in enumerate(path):
            s += lp[t, v]
        total += math.exp(s)
    if total == 0.0:
        raise InfeasibleAlignment("no path collapses to the labels")
    return -math.log(total)


def collapse(path):
    """Merge repeated frame labels, then strip blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
            prev = p
    return tuple(p for p in out if p != BLANK)


def greedy_decode(log_probs):
    """Per-frame argmax followed by CTC collapse."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    if data.ndim != 2:
        raise InvalidShape(f"log_probs must be 2-d, got {data.shape}")
    return list(collapse(int(v) for v in data.argmax(axis=1)))


def label_error_rate(hyp, ref) -> float:
    """Edit distance over reference length (>= 0, may exceed 1)."""
    h = _as_label_array(hyp)
    r = _as_label_array(ref)
    dist = kernels.levenshtein(h, r)
    return dist / max(1, r.size)
