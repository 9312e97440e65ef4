"""Architecture reports: per-module parameter ratios between two
checkpoints, and an optional attention-map dump for a probe sequence.
"""
from __future__ import annotations

import re

import numpy as np

from .checkpoint import read_manifest
from .encoder import MHSAModule, ModuleKind
from .errors import InvalidInput

_TENSOR_NAME = re.compile(r"block(\d+)\.([A-Z0-9]+)\.g(\d+)\.(\w+)$")


def module_param_counts(manifest: dict) -> dict:
    """{(layer, kind): group param total} from a parsed manifest."""
    counts: dict[tuple, int] = {}
    i = 0
    while f"tensor.{i}.name" in manifest:
        name = manifest[f"tensor.{i}.name"]
        shape_text = manifest[f"tensor.{i}.shape"]
        i += 1
        m = _TENSOR_NAME.match(name)
        if m is None or m[4] == "scale":
            continue
        layer, kind = int(m[1]), ModuleKind[m[2]]
        size = int(np.prod([int(d) for d in shape_text.split(",")], dtype=np.int64))
        counts[(layer, kind)] = counts.get((layer, kind), 0) + size
    return counts


def _manifest_of(source) -> dict:
    return source if isinstance(source, dict) else read_manifest(source)


def report_distribution(before, after) -> str:
    """TSV of params_after / params_before per (layer, module kind).

    before/after are checkpoint directories or parsed manifests with the
    same layer count; a fully dropped module reports ratio 0.
    """
    mb = _manifest_of(before)
    ma = _manifest_of(after)
    if mb.get("model.L") != ma.get("model.L"):
        raise InvalidInput(
            f"layer counts differ: {mb.get('model.L')} vs {ma.get('model.L')}"
        )
    cb = module_param_counts(mb)
    ca = module_param_counts(ma)
    lines = ["layer\tmodule_kind\tratio"]
    for (layer, kind), base in sorted(cb.items(), key=lambda e: (e[0][0], int(e[0][1]))):
        now = ca.get((layer, kind), 0)
        lines.append(f"{layer}\t{kind.name}\t{now / base!r}")
    return "\n".join(lines) + "\n"


def dump_attention(model, features) -> str:
    """Head-averaged attention matrices per layer for one probe input."""
    model.set_attention_capture(True)
    try:
        model.forward(features)
        blocks = []
        for i, block in enumerate(model.blocks):
            mod = block.modules[ModuleKind.MHSA]
            assert isinstance(mod, MHSAModule)
            maps = mod.last_attention
            blocks.append(f"# layer {i} heads {len(maps)}")
            if maps:
                avg = np.mean(np.stack(maps), axis=0)
                for row in avg:
                    blocks.append("\t".join(repr(float(v)) for v in row))
        return "\n".join(blocks) + "\n"
    finally:
        model.set_attention_capture(False)
