"""Adam with bias correction and the one-cycle learning-rate trajectory.

Moment buffers are keyed by tensor identity so surgery can copy them to
grown weights or discard them with dropped ones.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidState


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._keys: dict[int, object] = {}  # keeps keyed tensors alive

    def _state(self, p):
        key = id(p)
        if key not in self._m:
            self._m[key] = np.zeros_like(p.data)
            self._v[key] = np.zeros_like(p.data)
            self._keys[key] = p
        return self._m[key], self._v[key]

    def set_params(self, params):
        self.params = list(params)
        live = {id(p) for p in self.params}
        for key in [k for k in self._m if k not in live]:
            del self._m[key], self._v[key], self._keys[key]

    def copy_state(self, src, dst):
        sm, sv = self._state(src)
        self._m[id(dst)] = sm.copy()
        self._v[id(dst)] = sv.copy()
        self._keys[id(dst)] = dst

    def drop_state(self, p):
        key = id(p)
        self._m.pop(key, None)
        self._v.pop(key, None)
        self._keys.pop(key, None)

    def moments(self, p):
        if id(p) not in self._m:
            return None
        return self._m[id(p)], self._v[id(p)]

    def step(self, lr: float):
        """One update over all params; tensors without a gradient are
        left untouched (their moments do not decay either)."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise InvalidState(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{p.data.shape}; surgery bookkeeping is broken"
                )
            m, v = self._state(p)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def one_cycle(step, total_steps, lr_start=4e-6, lr_peak=4e-4, lr_final=1e-7):
    """Piecewise-linear rate: start->peak over the first 45% of steps,
    back to start over the next 45%, down to final over the last 10%."""
    if step < 0 or step > total_steps:
        raise InvalidState(f"step {step} outside [0, {total_steps}]")
    p1 = 0.45 * total_steps
    p2 = 0.90 * total_steps
    if step <= p1:
        return lr_start + (lr_peak - lr_start) * (step / p1)
    if step <= p2:
        return lr_peak + (lr_start - lr_peak) * ((step - p1) / (p2 - p1))
    return lr_start + (lr_final - lr_start) * ((step - p2) / (total_steps - p2))


def one_cycle_lr(step, cfg):
    """one_cycle using the fields of a TrainConfig."""
    return one_cycle(step, cfg.total_steps, cfg.lr_start, cfg.lr_peak, cfg.lr_final)
