"""Per-group importance scores: weight magnitude, gradient norm,
first-order Taylor, or a learnable scale trained alongside the weights.

Smoothed scores live on the groups themselves; ScoreState tracks the
refresh cadence and the RNG for the scaled/unscaled coin flip.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, InvalidState

METRICS = ("magnitude", "gradient", "taylor", "learnable")


@dataclass
class ScoreConfig:
    metric: str = "taylor"
    alpha: float = 0.9
    update_interval: int = 50
    scale_prob: float = 0.5

    def __post_init__(self):
        if self.metric not in METRICS:
            raise InvalidConfig(f"unknown metric {self.metric!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidConfig(f"alpha must be in (0, 1], got {self.alpha}")
        if self.update_interval < 1:
            raise InvalidConfig("update_interval must be >= 1")
        if self.metric == "learnable" and self.scale_prob != 0.5:
            raise InvalidConfig("the learnable metric uses a fixed 0.5 scale probability")


@dataclass
class ScoreState:
    metric: str
    steps_since_update: int = 0
    rng: np.random.Generator = field(
        default_factory=lambda: np.random.default_rng(0)
    )

    @classmethod
    def create(cls, cfg: ScoreConfig, seed: int) -> "ScoreState":
        return cls(metric=cfg.metric,
                   rng=np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed))))


def instantaneous_score(metric: str, group) -> float:
    """Unsmoothed score of one group from its current weights/grads."""
    total_n = 0
    acc = 0.0
    for t in group.slices.values():
        w = t.data
        total_n += w.size
        if metric == "magnitude":
            acc += float(np.abs(w, dtype=np.float64).sum())
        else:
            if t.grad is None:
                raise InvalidState(
                    f"metric {metric!r} needs gradients, none on group {group.id}"
                )
            g = t.grad.astype(np.float64, copy=False)
            if metric == "gradient":
                acc += float((g * g).sum())
            else:  # taylor
                gw = g * w.astype(np.float64, copy=False)
                acc += float((gw * gw).sum())
    if metric == "magnitude":
        return acc / total_n
    return float(np.sqrt(acc)) / total_n


def update_scores(state: ScoreState, model, cfg: ScoreConfig):
    """Exponentially smooth each group's score toward its current value.

    No-op for the learnable metric, whose score is the scale parameter.
    """
    if cfg.metric == "learnable":
        return
    for group in model.all_groups():
        inst = instantaneous_score(cfg.metric, group)
        group.score = (1.0 - cfg.alpha) * group.score + cfg.alpha * inst


def effective_score(state: ScoreState, group) -> float:
    if state.metric == "learnable":
        return float(group.scale.data)
    return group.score


def apply_learnable_scales(model, state: ScoreState, cfg: ScoreConfig,
                           step_rng=None) -> str:
    """One coin flip per step: apply every group's scale this step or not."""
    if cfg.metric != "learnable":
        raise InvalidState("scaling applies to the learnable metric only")
    rng = state.rng if step_rng is None else step_rng
    scaled = bool(rng.random() < cfg.scale_prob)
    model.scales_active = scaled
    return "scaled" if scaled else "unscaled"


def reset_learnable_scores(model, state: ScoreState = None, optimizer=None):
    """Set every scale back to 1 and clear its optimizer moments."""
    for group in model.all_groups():
        group.scale.data[...] = 1.0
        group.scale.grad = None
        if optimizer is not None:
            optimizer.drop_state(group.scale)


def rank_groups(state: ScoreState, model):
    """GroupIds in descending importance; ties break on the id itself."""
    entries = []
    for group in model.all_groups():
        s = effective_score(state, group)
        if not np.isfinite(s):
            raise InvalidState(f"group {group.id} has non-finite score {s}")
        entries.append((group.id, s))
    entries.sort(key=lambda e: (-e[1],) + e[0].sort_key())
    return [gid for gid, _ in entries]


def score_table(state: ScoreState, model) -> str:
    """group_id<TAB>param_count<TAB>score, one line per live group."""
    lines = []
    for group in model.all_groups():
        s = effective_score(state, group)
        lines.append(f"{group.id}\t{group.param_count}\t{s!r}")
    return "\n".join(lines) + "\n"
