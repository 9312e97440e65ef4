"""Synthetic CTC task: each label has a fixed random feature embedding,
repeated for a fixed number of frames, plus optional Gaussian noise.

With frames_per_symbol >= the stride-4 frontend's factor times two, every
label pattern (including adjacent repeats) stays alignable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig

FEATURE_DIM = 16


@dataclass
class DataConfig:
    vocab: int = 8
    seq_len_range: tuple = (3, 6)
    frames_per_symbol: int = 8
    noise_std: float = 0.0
    seed: int = 2024

    def __post_init__(self):
        if self.vocab < 2:
            raise InvalidConfig("vocab must be >= 2")
        lo, hi = self.seq_len_range
        if lo < 1 or hi < lo:
            raise InvalidConfig(f"bad seq_len_range {self.seq_len_range}")
        self.seq_len_range = (int(lo), int(hi))
        if self.frames_per_symbol < 4:
            raise InvalidConfig("frames_per_symbol must be >= 4 to survive the stride-4 frontend")
        if self.noise_std < 0:
            raise InvalidConfig("noise_std must be >= 0")


def symbol_embeddings(cfg: DataConfig) -> np.ndarray:
    """[vocab, FEATURE_DIM] table, a pure function of the data seed."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, 0xE))))
    return rng.uniform(-1.0, 1.0, size=(cfg.vocab, FEATURE_DIM))


def generate_sequence(cfg: DataConfig, rng: np.random.Generator, table=None):
    """One (features [T, FEATURE_DIM] float32, labels tuple) pair."""
    if table is None:
        table = symbol_embeddings(cfg)
    lo, hi = cfg.seq_len_range
    n = int(rng.integers(lo, hi + 1))
    labels = rng.integers(1, cfg.vocab + 1, size=n)
    feats = np.repeat(table[labels - 1], cfg.frames_per_symbol, axis=0)
    if cfg.noise_std > 0:
        feats = feats + rng.normal(0.0, cfg.noise_std, size=feats.shape)
    return feats.astype(np.float32), tuple(int(v) for v in labels)


def generate_synthetic_batch(cfg: DataConfig, rng: np.random.Generator, batch_size: int):
    table = symbol_embeddings(cfg)
    return [generate_sequence(cfg, rng, table) for _ in range(batch_size)]
