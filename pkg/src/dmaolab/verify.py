"""Gradient verification: per-op finite-difference checks and a sparse
end-to-end probe through the encoder and CTC loss. Shared by the test
suite and the gradcheck CLI command.
"""
from __future__ import annotations

import numpy as np

from . import tensor as tt
from .ctc import ctc_loss
from .data import DataConfig, generate_synthetic_batch
from .encoder import ModelConfig, build_model
from .tensor import Tape, Tensor, backward, finite_diff_check, zero_grads


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def op_checks(seed=0, h=1e-5, tol=1e-4):
    """Finite-difference check for every differentiable op, three random
    shapes each. Returns {op_name: worst relative error}."""
    rng = np.random.default_rng(seed)
    results = {}

    def run(name, build):
        worst = 0.0
        for _ in range(3):
            f, params = build()
            report = finite_diff_check(f, params, h=h, tol=tol)
            worst = max(worst, report["max_rel_err"])
        results[name] = worst

    def shapes2():
        m, k, n = (int(v) for v in rng.integers(2, 6, size=3))
        return m, k, n

    def mk_matmul():
        m, k, n = shapes2()
        a, b = _leaf(rng, (m, k)), _leaf(rng, (k, n))
        return lambda: tt.sum_all(tt.matmul(a, b)), [a, b]

    def mk_binary(op):
        def build():
            shape = (int(rng.integers(2, 7)),)
            a, b = _leaf(rng, shape), _leaf(rng, shape)
            return lambda: tt.sum_all(op(a, b)), [a, b]
        return build

    def mk_scale_const():
        a = _leaf(rng, (int(rng.integers(2, 7)),))
        c = float(rng.normal())
        return lambda: tt.sum_all(tt.scale(a, c)), [a]

    def mk_scale_tensor():
        a = _leaf(rng, (int(rng.integers(2, 7)),))
        s = Tensor(np.asarray(rng.normal()), requires_grad=True)
        return lambda: tt.sum_all(tt.scale(a, s)), [a, s]

    def mk_unary(op):
        def build():
            a = _leaf(rng, (int(rng.integers(2, 5)), int(rng.integers(2, 5))))
            return lambda: tt.sum_all(op(a)), [a]
        return build

    def mk_glu():
        a = _leaf(rng, (int(rng.integers(2, 5)), 2 * int(rng.integers(1, 4))))
        return lambda: tt.sum_all(tt.glu(a, axis=-1)), [a]

    def mk_softmax(op):
        def build():
            a = _leaf(rng, (int(rng.integers(2, 5)), int(rng.integers(2, 8))))
            w = Tensor(rng.normal(size=a.data.shape), requires_grad=False)
            # weight the rows so the reduction mixes entries non-trivially
            return lambda: tt.sum_all(tt.mul(op(a, -1), w)), [a]
        return build

    def mk_layer_norm():
        d = int(rng.integers(2, 9))
        x = _leaf(rng, (int(rng.integers(2, 5)), d))
        gamma = _leaf(rng, (d,))
        beta = _leaf(rng, (d,))
        return lambda: tt.sum_all(tt.swish(tt.layer_norm(x, gamma, beta))), [x, gamma, beta]

    def mk_conv():
        t, c = int(rng.integers(3, 8)), int(rng.integers(1, 4))
        k = 2 * int(rng.integers(1, 3)) + 1
        x = _leaf(rng, (t, c))
        w = _leaf(rng, (k, c))
        return lambda: tt.sum_all(tt.swish(tt.depthwise_conv1d(x, w))), [x, w]

    def mk_ctc():
        t = int(rng.integers(2, 6))
        v = int(rng.integers(2, 4))
        raw = rng.normal(size=(t, v + 1))
        lp = Tensor(raw - np.log(np.exp(raw).sum(axis=1, keepdims=True)),
                    requires_grad=True)
        labels = [int(rng.integers(1, v + 1))]
        return lambda: ctc_loss(lp, labels), [lp]

    run("matmul", mk_matmul)
    run("add", mk_binary(tt.add))
    run("sub", mk_binary(tt.sub))
    run("mul", mk_binary(tt.mul))
    run("scale_const", mk_scale_const)
    run("scale_tensor", mk_scale_tensor)
    run("transpose", mk_unary(lambda a: tt.swish(tt.transpose(a))))
    run("swish", mk_unary(tt.swish))
    run("glu", mk_glu)
    run("softmax", mk_softmax(tt.softmax))
    run("log_softmax", mk_softmax(tt.log_softmax))
    run("layer_norm", mk_layer_norm)
    run("depthwise_conv1d", mk_conv)
    run("ctc_loss", mk_ctc)
    return results


def probe_gradients(f, probes, h=1e-5):
    """Check single weight elements: probes is a list of (tensor, flat
    index). Returns the max relative error across probes."""
    tensors = list({id(t): t for t, _ in probes}.values())
    zero_grads(tensors)
    with Tape():
        backward(f())
    worst = 0.0
    for t, idx in probes:
        ad = float(t.grad.reshape(-1)[idx]) if t.grad is not None else 0.0
        flat = t.data.reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + h
        up = float(f().data)
        flat[idx] = keep - h
        down = float(f().data)
        flat[idx] = keep
        fd = (up - down) / (2.0 * h)
        err = abs(ad - fd) / max(abs(ad), abs(fd), 1e-3)
        worst = max(worst, err)
    return worst


def encoder_ctc_probe(seed=0, n_probes=10, h=1e-5):
    """End-to-end gradient probe: encoder forward + CTC loss in float64,
    n_probes scattered weight elements against central differences."""
    mcfg = ModelConfig(d_model=16, L=1, k=3, C=4, M=4, vocab=4, seed=seed)
    model = build_model(mcfg, dtype=np.float64)
    dcfg = DataConfig(vocab=4, seq_len_range=(2, 3), frames_per_symbol=8,
                      noise_std=0.05, seed=seed + 1)
    rng = np.random.default_rng(seed + 2)
    batch = generate_synthetic_batch(dcfg, rng, 2)

    def f():
        losses = [ctc_loss(model.forward(feats), labels) for feats, labels in batch]
        return tt.mean_tensors(losses)

    params = model.parameters()
    probes = []
    for i in range(n_probes):
        t = params[int(rng.integers(0, len(params)))]
        probes.append((t, int(rng.integers(0, t.data.size))))
    return probe_gradients(f, probes, h=h)
