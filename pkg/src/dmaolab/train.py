"""Training loop: synthetic batches, CTC loss, Adam under a one-cycle
schedule, periodic score refreshes, and scheduled grow-and-drop events.

Runs are deterministic per config: identical seeds give byte-identical
loss logs and checkpoints.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .checkpoint import TrainingState, load_checkpoint, read_manifest, save_checkpoint
from .config import TrainConfig
from .ctc import ctc_loss, greedy_decode, label_error_rate
from .data import FEATURE_DIM, generate_sequence, generate_synthetic_batch, symbol_embeddings
from .encoder import build_model
from .errors import InvalidState, NumericalError
from .optim import Adam, one_cycle_lr
from .reports import report_distribution
from .scoring import ScoreState, apply_learnable_scales, score_table, update_scores
from .surgery import apply_adaptation
from .tensor import Tape, backward, mean_tensors, zero_grads


@dataclass
class RunArtifacts:
    out_dir: str
    final_checkpoint: str
    loss_log: str
    surgery_log: str
    distribution_report: str | None
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    event_steps: list = field(default_factory=list)
    reports: list = field(default_factory=list)


def batch_loss(model, batch, scaled=None):
    """Mean CTC loss over a list of (features, labels) pairs."""
    losses = [ctc_loss(model.forward(feats, scaled), labels) for feats, labels in batch]
    return mean_tensors(losses)


def run_training(cfg: TrainConfig, out_dir=None, resume_from=None,
                 snapshot_step=None, plan_enabled=True) -> RunArtifacts:
    """Train per config and write the run artifacts.

    plan_enabled=False bypasses the adaptation machinery entirely, which
    must produce artifacts identical to a delta=0 plan.
    """
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    learnable = cfg.score.metric == "learnable"

    if resume_from is not None:
        model, state = load_checkpoint(resume_from)
        if state is None or state.optimizer is None or state.data_rng is None:
            raise InvalidState(f"{resume_from} was saved without training state")
        optimizer = state.optimizer
        score_state = state.score
        data_rng = state.data_rng
        start_step = state.step
    else:
        model = build_model(cfg.model, feature_dim=FEATURE_DIM,
                            dtype=np.float32, trainable_scales=learnable)
        optimizer = Adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.eps)
        score_state = ScoreState.create(cfg.score, seed=(cfg.model.seed, 0x5C))
        data_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(cfg.data.seed))
        )
        start_step = 0

    events = cfg.plan.event_steps(cfg.total_steps) if plan_enabled else []
    event_set = set(events)

    def training_state():
        return TrainingState(step=completed, optimizer=optimizer,
                             score=score_state, data_rng=data_rng, config=cfg)

    completed = start_step
    initial_dir = os.path.join(out, "initial")
    if start_step == 0:
        save_checkpoint(model, training_state(), initial_dir)
        last_good = initial_dir
    else:
        last_good = resume_from

    log_rows = []
    surgery_reports = []
    for step in range(start_step, cfg.total_steps):
        lr = one_cycle_lr(step, cfg)
        try:
            batch = generate_synthetic_batch(cfg.data, data_rng, cfg.batch_size)
            if learnable:
                apply_learnable_scales(model, score_state, cfg.score)
            zero_grads(optimizer.params)
            with Tape():
                loss = batch_loss(model, batch)
                backward(loss)
            score_state.steps_since_update += 1
            if score_state.steps_since_update >= cfg.score.update_interval:
                update_scores(score_state, model, cfg.score)
                score_state.steps_since_update = 0
            optimizer.step(lr)
        except NumericalError as exc:
            raise NumericalError(
                f"aborted at step {step}: {exc}; last good checkpoint: {last_good}"
            ) from exc
        completed = step + 1
        flag = 0
        if completed in event_set:
            report = apply_adaptation(model, score_state, cfg.plan, completed,
                                      cfg.total_steps, optimizer)
            optimizer.set_params(model.parameters())
            surgery_reports.append(report)
            event_dir = os.path.join(out, f"event{completed}")
            save_checkpoint(model, training_state(), event_dir)
            last_good = event_dir
            flag = 1
        if snapshot_step is not None and completed == snapshot_step:
            save_checkpoint(model, training_state(), os.path.join(out, f"step{completed}"))
        log_rows.append(f"{step},{float(loss.data)!r},{lr!r},{flag}")

    final_dir = os.path.join(out, "final")
    save_checkpoint(model, training_state(), final_dir)

    loss_log = os.path.join(out, "loss.csv")
    with open(loss_log, "w", encoding="utf-8") as fh:
        fh.write("step,loss,lr,event_flag\n")
        fh.write("\n".join(log_rows) + ("\n" if log_rows else ""))
    surgery_log = os.path.join(out, "surgery.log")
    with open(surgery_log, "w", encoding="utf-8") as fh:
        for report in surgery_reports:
            fh.write(report.to_text())
    with open(os.path.join(out, "scores.tsv"), "w", encoding="utf-8") as fh:
        fh.write(score_table(score_state, model))

    distribution = None
    if start_step == 0:
        distribution = os.path.join(out, "distribution.tsv")
        with open(distribution, "w", encoding="utf-8") as fh:
            fh.write(report_distribution(read_manifest(initial_dir),
                                         read_manifest(final_dir)))

    rows = [r.split(",") for r in log_rows]
    return RunArtifacts(
        out_dir=out,
        final_checkpoint=final_dir,
        loss_log=loss_log,
        surgery_log=surgery_log,
        distribution_report=distribution,
        losses=[float(r[1]) for r in rows],
        lrs=[float(r[2]) for r in rows],
        event_steps=events,
        reports=surgery_reports,
    )


def evaluate(model, n_sequences, data_cfg, eval_seed=97) -> float:
    """Mean greedy label error rate on a held-out stream of sequences."""
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((eval_seed, data_cfg.seed)))
    )
    table = symbol_embeddings(data_cfg)
    total = 0.0
    for _ in range(n_sequences):
        feats, labels = generate_sequence(data_cfg, rng, table)
        log_probs = model.forward(feats)
        total += label_error_rate(greedy_decode(log_probs.data), labels)
    return total / n_sequences
