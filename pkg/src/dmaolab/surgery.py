"""Grow-and-drop engine: budgeted selection of top/bottom groups, the
matrix surgery itself, and optimizer/score bookkeeping.

Per event, at most a budget B = floor((delta / iterations) * total group
params) is dropped from the bottom of the ranking and at most B grown by
duplicating the top; the greedy prefix never exceeds B, so the overall
modification stays a cap, not a target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, InvalidState, NotFound
from .scoring import ScoreState, rank_groups, reset_learnable_scores

INIT_MODES = ("copy", "copy_noise", "random")


@dataclass
class AdaptationPlan:
    delta: float = 0.15
    iterations: int = 1
    t_end_fraction: float = 0.2
    init: str = "copy"
    noise_std: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.delta <= 0.5:
            raise InvalidConfig(f"delta must be in [0, 0.5], got {self.delta}")
        if self.iterations < 1:
            raise InvalidConfig("iterations must be >= 1")
        if not 0.0 < self.t_end_fraction < 1.0:
            raise InvalidConfig("t_end_fraction must be in (0, 1)")
        if self.init not in INIT_MODES:
            raise InvalidConfig(f"unknown init {self.init!r}")
        if self.noise_std < 0:
            raise InvalidConfig("noise_std must be >= 0")

    def event_steps(self, total_steps: int) -> list[int]:
        """Event steps floor(i * dT) for i = 1..iterations; empty when
        delta is zero (the machinery is then a strict no-op)."""
        if self.delta == 0.0:
            return []
        t_end = self.t_end_fraction * total_steps
        dt = t_end / self.iterations
        steps = [math.floor(i * dt) for i in range(1, self.iterations + 1)]
        if any(b <= a for a, b in zip(steps, steps[1:])) or steps[0] < 1:
            raise InvalidConfig(
                f"schedule collapses: events {steps} are not strictly increasing"
            )
        return steps


@dataclass
class SurgeryReport:
    step: int
    dropped: list = field(default_factory=list)  # (GroupId, param_count)
    grown: list = field(default_factory=list)    # (source, new GroupId, param_count)
    params_before: int = 0
    params_after: int = 0

    def to_text(self) -> str:
        lines = [f"== surgery @ step {self.step}"]
        for gid, n in self.dropped:
            lines.append(f"drop {gid} ({n})")
        for src, new, n in self.grown:
            lines.append(f"grow {src} -> {new} ({n})")
        lines.append(f"params {self.params_before} -> {self.params_after}")
        return "\n".join(lines) + "\n"


def select_adaptation_sets(ranking, group_sizes, delta, iterations):
    """Greedy budgeted prefixes from both ends of the ranking.

    Returns (grow_ids, drop_ids); each is the maximal prefix whose
    cumulative size stays <= B, and the two never share a group.
    """
    if not 0.0 <= delta <= 0.5:
        raise InvalidConfig(f"delta must be in [0, 0.5], got {delta}")
    if iterations < 1:
        raise InvalidConfig("iterations must be >= 1")
    total = sum(group_sizes[g] for g in ranking)
    budget = math.floor((delta / iterations) * total)
    drop = []
    used = 0
    for gid in reversed(ranking):
        size = group_sizes[gid]
        if used + size > budget:
            break
        drop.append(gid)
        used += size
    dropped = set(drop)
    grow = []
    used = 0
    for gid in ranking:
        if gid in dropped:
            break
        size = group_sizes[gid]
        if used + size > budget:
            break
        grow.append(gid)
        used += size
    return grow, drop


def _purge_group_state(group, optimizer):
    if optimizer is None:
        return
    for t in group.slices.values():
        optimizer.drop_state(t)
    optimizer.drop_state(group.scale)


def _grown_slices(model, module, source, init, noise_std):
    from .tensor import Tensor

    if init == "random":
        fresh = module.fresh_slices(model.init_rng, like=source)
        return {n: Tensor(a, requires_grad=True) for n, a in fresh.items()}
    out = {}
    for name, t in source.slices.items():
        data = t.data.copy()
        if init == "copy_noise" and noise_std > 0:
            noise = model.init_rng.normal(0.0, noise_std, size=data.shape)
            data = data + noise.astype(data.dtype)
        out[name] = Tensor(data, requires_grad=True)
    return out


def _grow(model, module, source, init, noise_std, optimizer):
    slices = _grown_slices(model, module, source, init, noise_std)
    new = module.add_group(
        slices,
        generation=source.id.generation + 1,
        score=source.score,
        trainable_scale=model.trainable_scales,
    )
    if optimizer is not None and init in ("copy", "copy_noise"):
        for name in source.slices:
            optimizer.copy_state(source.slices[name], new.slices[name])
    return new


def grow_group(model, source, init="copy", optimizer=None, noise_std=0.01):
    """Duplicate a live group into a new slot of the same module.

    copy: identical weights and optimizer moments; copy_noise: plus
    Gaussian noise on the weights; random: fresh module init, cold
    moments. The new group inherits the source's smoothed score and
    starts with scale 1.
    """
    if init not in INIT_MODES:
        raise InvalidConfig(f"unknown init {init!r}")
    module, src = model.group_by_id(source)
    return _grow(model, module, src, init, noise_std, optimizer).id


def drop_group(model, gid, optimizer=None):
    """Delete a group's slices; remaining slots renumber contiguously."""
    module, group = model.group_by_id(gid)
    module.remove_group(group)
    _purge_group_state(group, optimizer)
    module.renumber()


def apply_adaptation(model, state: ScoreState, plan: AdaptationPlan, step: int,
                     total_steps: int, optimizer=None) -> SurgeryReport:
    """Rank, select, drop the bottom set, grow the top set, reset scales.

    Must be called exactly at a scheduled event step.
    """
    if step not in plan.event_steps(total_steps):
        raise InvalidState(f"step {step} is not on the adaptation schedule")
    ranking = rank_groups(state, model)
    sizes = {g.id: g.param_count for g in model.all_groups()}
    grow_ids, drop_ids = select_adaptation_sets(
        ranking, sizes, plan.delta, plan.iterations
    )
    params_before = model.count_params("encoder_groups")
    drop_pairs = [model.group_by_id(g) for g in drop_ids]
    grow_pairs = [model.group_by_id(g) for g in grow_ids]

    report = SurgeryReport(step=step, params_before=params_before)
    for module, group in drop_pairs:
        report.dropped.append((group.id, group.param_count))
        module.remove_group(group)
        _purge_group_state(group, optimizer)
    new_groups = []
    for module, source in grow_pairs:
        src_id = source.id
        new = _grow(model, module, source, plan.init, plan.noise_std, optimizer)
        new_groups.append((src_id, new))
    model.renumber_slots()
    report.grown = [(src, new.id, new.param_count) for src, new in new_groups]
    reset_learnable_scores(model, state, optimizer)
    report.params_after = model.count_params("encoder_groups")
    grown_total = sum(n for _, _, n in report.grown)
    dropped_total = sum(n for _, n in report.dropped)
    if report.params_after != report.params_before + grown_total - dropped_total:
        raise InvalidState("surgery accounting does not balance")
    return report
