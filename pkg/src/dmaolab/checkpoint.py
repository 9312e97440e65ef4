"""On-disk checkpoints: a UTF-8 key=value manifest plus one binary file of
little-endian float32 arrays concatenated in manifest order.

Round-trips are bit-exact: loading a checkpoint and running the model on
a fixed input reproduces the pre-save output byte for byte. Optimizer
moments, RNG streams and smoothed scores ride along so a run can resume
on an identical trajectory.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .config import _SECTIONS, _TRAIN_KEYS, TrainConfig
from .encoder import ModelConfig, ModuleKind, PartitionedEncoder, build_model
from .errors import CorruptCheckpoint, InvalidConfig
from .optim import Adam
from .scoring import ScoreState
from .tensor import Tensor

VERSION = "1"
MANIFEST = "manifest.txt"
WEIGHTS = "weights.bin"


@dataclass
class TrainingState:
    step: int = 0
    optimizer: Adam | None = None
    score: ScoreState | None = None
    data_rng: np.random.Generator | None = None
    config: TrainConfig | None = None


def _rng_to_text(g: np.random.Generator) -> str:
    st = g.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise InvalidConfig("only PCG64 generators are checkpointable")
    s = st["state"]
    return f"PCG64:{s['state']}:{s['inc']}:{st['has_uint32']}:{st['uinteger']}"


def _rng_from_text(text: str) -> np.random.Generator:
    parts = text.split(":")
    if len(parts) != 5 or parts[0] != "PCG64":
        raise CorruptCheckpoint(f"bad rng state {text!r}")
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(parts[1]), "inc": int(parts[2])},
        "has_uint32": int(parts[3]),
        "uinteger": int(parts[4]),
    }
    return np.random.Generator(bg)


def named_tensors(model: PartitionedEncoder):
    """(name, tensor) pairs in the canonical serialization order."""
    out = [("frontend.w", model.frontend_w)]
    for i, block in enumerate(model.blocks):
        for kind in block.kinds():
            gamma, beta = block.norms[kind]
            out.append((f"block{i}.{kind.name}.ln.gamma", gamma))
            out.append((f"block{i}.{kind.name}.ln.beta", beta))
            for group in block.modules[kind].groups:
                prefix = f"block{i}.{kind.name}.g{group.id.slot}"
                for sname, t in group.slices.items():
                    out.append((f"{prefix}.{sname}", t))
                out.append((f"{prefix}.scale", group.scale))
    out.append(("final.gamma", model.final_gamma))
    out.append(("final.beta", model.final_beta))
    out.append(("head.w", model.head_w))
    return out


def _shape_text(shape):
    return ",".join(str(d) for d in shape)


def _config_lines(cfg: TrainConfig):
    lines = []
    for section, (_, keys) in _SECTIONS.items():
        obj = getattr(cfg, section)
        for key, kind in keys.items():
            value = getattr(obj, key)
            if kind == "range":
                value = f"{value[0]},{value[1]}"
            elif kind is float:
                value = repr(value)
            lines.append(f"config.{section}.{key}={value}")
    for key, kind in _TRAIN_KEYS.items():
        value = getattr(cfg, key)
        lines.append(f"config.train.{key}={value!r}" if kind is float
                     else f"config.train.{key}={value}")
    return lines


def save_checkpoint(model: PartitionedEncoder, state: TrainingState | None, path):
    """Write manifest.txt and weights.bin into the directory at path."""
    if model.dtype != np.float32:
        raise InvalidConfig("checkpoints are binary32; model dtype must be float32")
    os.makedirs(path, exist_ok=True)
    names = named_tensors(model)
    lines = [
        f"version={VERSION}",
        "dtype=float32",
        f"architecture={model.config.architecture}",
        f"feature_dim={model.feature_dim}",
        f"scales_trainable={int(model.trainable_scales)}",
        f"rng.init={_rng_to_text(model.init_rng)}",
    ]
    mcfg = model.config
    for key in ("architecture", "d_model", "L", "k", "C", "M", "vocab", "seed"):
        lines.append(f"model.{key}={getattr(mcfg, key)}")
    for group in model.all_groups():
        gid = group.id
        lines.append(
            f"group.{gid.layer}.{gid.module_kind.name}.{gid.slot}="
            f"{gid.generation},{group.score!r}"
        )
    with_state = state is not None
    if with_state:
        lines.append(f"step={state.step}")
        if state.score is not None:
            lines.append(f"score.metric={state.score.metric}")
            lines.append(f"score.steps_since_update={state.score.steps_since_update}")
            lines.append(f"rng.score={_rng_to_text(state.score.rng)}")
        if state.data_rng is not None:
            lines.append(f"rng.data={_rng_to_text(state.data_rng)}")
        if state.config is not None:
            lines.extend(_config_lines(state.config))
    opt = state.optimizer if with_state else None
    lines.append(f"moments={int(opt is not None)}")
    if opt is not None:
        lines.append(f"adam.t={opt.t}")
        lines.append(f"adam.beta1={opt.beta1!r}")
        lines.append(f"adam.beta2={opt.beta2!r}")
        lines.append(f"adam.eps={opt.eps!r}")
    for i, (name, t) in enumerate(names):
        lines.append(f"tensor.{i}.name={name}")
        lines.append(f"tensor.{i}.shape={_shape_text(t.data.shape)}")
    chunks = [np.ascontiguousarray(t.data, dtype="<f4") for _, t in names]
    if opt is not None:
        for _, t in names:
            mv = opt.moments(t)
            m, v = mv if mv is not None else (np.zeros_like(t.data), np.zeros_like(t.data))
            chunks.append(np.ascontiguousarray(m, dtype="<f4"))
            chunks.append(np.ascontiguousarray(v, dtype="<f4"))
    with open(os.path.join(path, MANIFEST), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(path, WEIGHTS), "wb") as fh:
        for chunk in chunks:
            fh.write(chunk.tobytes())


def read_manifest(path) -> dict:
    fname = os.path.join(path, MANIFEST)
    try:
        with open(fname, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {fname}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise CorruptCheckpoint(f"{fname}:{lineno}: not a key=value line")
        key, value = line.split("=", 1)
        out[key] = value
    if out.get("version") != VERSION:
        raise CorruptCheckpoint(
            f"checkpoint version {out.get('version')!r}, expected {VERSION!r}"
        )
    return out


_GROUP_TENSOR = re.compile(r"block(\d+)\.([A-Z0-9]+)\.g(\d+)\.(\w+)$")


def _require(manifest, key):
    if key not in manifest:
        raise CorruptCheckpoint(f"manifest is missing {key!r}")
    return manifest[key]


def _rebuild_model(manifest) -> PartitionedEncoder:
    try:
        mcfg = ModelConfig(
            architecture=_require(manifest, "model.architecture"),
            d_model=int(_require(manifest, "model.d_model")),
            L=int(_require(manifest, "model.L")),
            k=int(_require(manifest, "model.k")),
            C=int(_require(manifest, "model.C")),
            M=int(_require(manifest, "model.M")),
            vocab=int(_require(manifest, "model.vocab")),
            seed=int(_require(manifest, "model.seed")),
        )
    except (ValueError, InvalidConfig) as exc:
        raise CorruptCheckpoint(f"bad model section: {exc}") from exc
    model = build_model(
        mcfg,
        feature_dim=int(_require(manifest, "feature_dim")),
        dtype=np.float32,
        trainable_scales=bool(int(_require(manifest, "scales_trainable"))),
    )
    model.init_rng = _rng_from_text(_require(manifest, "rng.init"))

    # replace the freshly built groups with the checkpointed structure
    for module in model.iter_modules():
        module.groups.clear()
    entries = []
    i = 0
    while f"tensor.{i}.name" in manifest:
        shape_text = _require(manifest, f"tensor.{i}.shape")
        shape = tuple(int(d) for d in shape_text.split(",")) if shape_text else ()
        entries.append((manifest[f"tensor.{i}.name"], shape))
        i += 1
    if not entries:
        raise CorruptCheckpoint("manifest lists no tensors")
    per_group: dict[tuple, dict] = {}
    for name, shape in entries:
        m = _GROUP_TENSOR.match(name)
        if m is None:
            continue
        layer, kind_name, slot, sname = int(m[1]), m[2], int(m[3]), m[4]
        if sname == "scale":
            continue
        per_group.setdefault((layer, ModuleKind[kind_name], slot), {})[sname] = shape
    by_module: dict[tuple, list] = {}
    for (layer, kind, slot), shapes in per_group.items():
        by_module.setdefault((layer, kind), []).append((slot, shapes))
    for block in model.blocks:
        for kind in block.kinds():
            module = block.modules[kind]
            records = sorted(by_module.get((block.layer, kind), []))
            for idx, (slot, shapes) in enumerate(records):
                if slot != idx:
                    raise CorruptCheckpoint(
                        f"group slots for block{block.layer}.{kind.name} are not contiguous"
                    )
                gline = _require(manifest, f"group.{block.layer}.{kind.name}.{slot}")
                gen_text, score_text = gline.split(",", 1)
                group = module.add_group(
                    {n: Tensor(np.zeros(s, dtype=np.float32), requires_grad=True)
                     for n, s in shapes.items()},
                    generation=int(gen_text),
                    score=float(score_text),
                    trainable_scale=model.trainable_scales,
                )
                expected = set(module.fresh_slices(model.init_rng, like=group))
                if set(shapes) != expected:
                    raise CorruptCheckpoint(
                        f"group {group.id} has slices {sorted(shapes)}, "
                        f"expected {sorted(expected)}"
                    )
    names = named_tensors(model)
    if [(n, t.data.shape) for n, t in names] != [(n, s) for n, s in entries]:
        raise CorruptCheckpoint("manifest tensor list does not match the architecture")
    return model


def load_checkpoint(path):
    """Rebuild (model, state) from a checkpoint directory.

    state is None when the checkpoint was saved without training state.
    """
    manifest = read_manifest(path)
    model = _rebuild_model(manifest)
    names = named_tensors(model)
    counts = [int(np.prod(t.data.shape, dtype=np.int64)) for _, t in names]
    with_moments = bool(int(manifest.get("moments", "0")))
    total = sum(counts) * (3 if with_moments else 1)
    fname = os.path.join(path, WEIGHTS)
    try:
        raw = np.fromfile(fname, dtype="<f4")
    except OSError as exc:
        raise CorruptCheckpoint(f"cannot read {fname}: {exc}") from exc
    if raw.size != total:
        raise CorruptCheckpoint(
            f"weight file holds {raw.size} floats, manifest expects {total}"
        )
    if not np.isfinite(raw).all():
        raise CorruptCheckpoint("weight file contains non-finite values")
    ofs = 0
    arrays = []
    for (_, t), n in zip(names, counts):
        arrays.append(raw[ofs:ofs + n].reshape(t.data.shape).astype(np.float32))
        ofs += n
    for (_, t), arr in zip(names, arrays):
        t.data = arr
    state = None
    if "step" in manifest:
        optimizer = None
        if with_moments:
            optimizer = Adam(
                model.parameters(),
                beta1=float(_require(manifest, "adam.beta1")),
                beta2=float(_require(manifest, "adam.beta2")),
                eps=float(_require(manifest, "adam.eps")),
            )
            optimizer.t = int(_require(manifest, "adam.t"))
            for (_, t), _n in zip(names, counts):
                m = raw[ofs:ofs + t.data.size].reshape(t.data.shape).astype(np.float32)
                ofs += t.data.size
                v = raw[ofs:ofs + t.data.size].reshape(t.data.shape).astype(np.float32)
                ofs += t.data.size
                optimizer._m[id(t)] = m
                optimizer._v[id(t)] = v
                optimizer._keys[id(t)] = t
        score = None
        if "score.metric" in manifest:
            score = ScoreState(
                metric=manifest["score.metric"],
                steps_since_update=int(manifest["score.steps_since_update"]),
                rng=_rng_from_text(_require(manifest, "rng.score")),
            )
        data_rng = _rng_from_text(manifest["rng.data"]) if "rng.data" in manifest else None
        cfg = _config_from_manifest(manifest)
        state = TrainingState(
            step=int(manifest["step"]),
            optimizer=optimizer,
            score=score,
            data_rng=data_rng,
            config=cfg,
        )
    return model, state


def _config_from_manifest(manifest) -> TrainConfig | None:
    from .config import _convert

    kwargs = {}
    for section, (cls, keys) in _SECTIONS.items():
        values = {}
        for key, kind in keys.items():
            mkey = f"config.{section}.{key}"
            if mkey not in manifest:
                return None
            values[key] = _convert(section, key, kind, manifest[mkey])
        kwargs[section] = cls(**values)
    train_kwargs = {}
    for key, kind in _TRAIN_KEYS.items():
        mkey = f"config.train.{key}"
        if mkey not in manifest:
            return None
        train_kwargs[key] = _convert("train", key, kind, manifest[mkey])
    return TrainConfig(**kwargs, **train_kwargs)
