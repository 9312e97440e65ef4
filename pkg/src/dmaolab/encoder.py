"""Partitioned encoder built from independently growable parameter groups.

Every module (feed-forward, attention, convolution, gated MLP) computes
its output as the literal sum of per-group contributions, so group
additivity holds exactly and grow/drop surgery reduces to list edits.
Hidden dimensions belong to groups; module input/output stay d_model.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from . import tensor as tt
from .errors import InvalidConfig, InvalidShape, NotFound
from .tensor import Tensor


class ModuleKind(IntEnum):
    FFN1 = 0
    MHSA = 1
    CONV = 2
    FFN2 = 3
    CGMLP = 4


@dataclass(frozen=True)
class GroupId:
    layer: int
    module_kind: ModuleKind
    slot: int
    generation: int

    def sort_key(self):
        return (self.layer, int(self.module_kind), self.slot, self.generation)

    def __str__(self):
        return f"{self.layer}:{self.module_kind.name}:{self.slot}:{self.generation}"


def parse_group_id(text: str) -> GroupId:
    layer, kind, slot, gen = text.split(":")
    return GroupId(int(layer), ModuleKind[kind], int(slot), int(gen))


class ParameterGroup:
    """One grow/droppable slice of a module: named weight tensors plus a
    smoothed importance score and a learnable scale."""

    __slots__ = ("id", "slices", "score", "scale")

    def __init__(self, gid: GroupId, slices: dict, score=0.0, scale=None,
                 dtype=np.float32, trainable_scale=False):
        self.id = gid
        self.slices = slices
        self.score = float(score)
        if scale is None:
            scale = Tensor(np.ones((), dtype=dtype), requires_grad=trainable_scale)
        self.scale = scale

    @property
    def param_count(self) -> int:
        return sum(int(t.data.size) for t in self.slices.values())

    def tensors(self):
        return list(self.slices.values())


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _maybe_scale(w: Tensor, group: ParameterGroup, scaled: bool) -> Tensor:
    return tt.scale(w, group.scale) if scaled else w


class GroupModule:
    """Base for the four module kinds; owns an ordered group list."""

    kind: ModuleKind

    def __init__(self, layer: int, d_model: int, dtype):
        self.layer = layer
        self.d_model = d_model
        self.dtype = dtype
        self.groups: list[ParameterGroup] = []

    def fresh_slices(self, rng) -> dict:
        raise NotImplementedError

    def contribution(self, group: ParameterGroup, x: Tensor, scaled=False) -> Tensor:
        raise NotImplementedError

    def forward(self, x: Tensor, scaled=False) -> Tensor:
        if not self.groups:
            return Tensor(np.zeros((x.data.shape[0], self.d_model), dtype=x.data.dtype))
        out = self.contribution(self.groups[0], x, scaled)
        for g in self.groups[1:]:
            out = tt.add(out, self.contribution(g, x, scaled))
        return out

    def add_group(self, slices: dict, generation=0, score=0.0,
                  trainable_scale=False) -> ParameterGroup:
        gid = GroupId(self.layer, self.kind, len(self.groups), generation)
        group = ParameterGroup(gid, slices, score=score, dtype=self.dtype,
                               trainable_scale=trainable_scale)
        self.groups.append(group)
        return group

    def remove_group(self, group: ParameterGroup):
        self.groups.remove(group)

    def renumber(self):
        for i, g in enumerate(self.groups):
            if g.id.slot != i:
                g.id = replace(g.id, slot=i)


class FFNModule(GroupModule):
    """Two-matrix feed-forward; each group owns a block of hidden units."""

    def __init__(self, layer, d_model, width, kind, dtype):
        super().__init__(layer, d_model, dtype)
        self.kind = kind
        self.width = width

    @property
    def hidden_width(self) -> int:
        return sum(g.slices["w1"].data.shape[1] for g in self.groups)

    def concat_w1(self) -> np.ndarray:
        return np.concatenate([g.slices["w1"].data for g in self.groups], axis=1)

    def fresh_slices(self, rng, like=None) -> dict:
        w = self.width if like is None else like.slices["w1"].data.shape[1]
        return {
            "w1": _uniform(rng, self.d_model, (self.d_model, w), self.dtype),
            "w2": _uniform(rng, w, (w, self.d_model), self.dtype),
        }

    def contribution(self, group, x, scaled=False):
        w1 = _maybe_scale(group.slices["w1"], group, scaled)
        w2 = _maybe_scale(group.slices["w2"], group, scaled)
        return tt.matmul(tt.swish(tt.matmul(x, w1)), w2)


class MHSAModule(GroupModule):
    """Self-attention; each group is one head with its four projections."""

    kind = ModuleKind.MHSA

    def __init__(self, layer, d_model, d_h, dtype):
        super().__init__(layer, d_model, dtype)
        self.d_h = d_h
        self.capture = False
        self.last_attention: list[np.ndarray] = []

    def fresh_slices(self, rng, like=None) -> dict:
        d, h = self.d_model, self.d_h
        return {
            "wq": _uniform(rng, d, (d, h), self.dtype),
            "wk": _uniform(rng, d, (d, h), self.dtype),
            "wv": _uniform(rng, d, (d, h), self.dtype),
            "wo": _uniform(rng, h, (h, d), self.dtype),
        }

    def contribution(self, group, x, scaled=False):
        wq = _maybe_scale(group.slices["wq"], group, scaled)
        wk = _maybe_scale(group.slices["wk"], group, scaled)
        wv = _maybe_scale(group.slices["wv"], group, scaled)
        wo = _maybe_scale(group.slices["wo"], group, scaled)
        q = tt.matmul(x, wq)
        k = tt.matmul(x, wk)
        v = tt.matmul(x, wv)
        scores = tt.scale(tt.matmul(q, tt.transpose(k)), 1.0 / np.sqrt(self.d_h))
        attn = tt.softmax(scores, axis=-1)
        if self.capture:
            self.last_attention.append(attn.data.copy())
        return tt.matmul(tt.matmul(attn, v), wo)


class ConvModule(GroupModule):
    """Pointwise expand, gated linear unit, depthwise temporal conv,
    swish, pointwise project. Gating stays inside the group."""

    kind = ModuleKind.CONV

    def __init__(self, layer, d_model, in_width, kernel, dtype):
        super().__init__(layer, d_model, dtype)
        if kernel % 2 == 0:
            raise InvalidConfig(f"conv kernel must be odd, got {kernel}")
        self.in_width = in_width
        self.kernel = kernel

    def fresh_slices(self, rng, like=None) -> dict:
        w = self.in_width if like is None else like.slices["win"].data.shape[1]
        mid = w // 2
        return {
            "win": _uniform(rng, self.d_model, (self.d_model, w), self.dtype),
            "wconv": _uniform(rng, self.kernel, (self.kernel, mid), self.dtype),
            "wout": _uniform(rng, mid, (mid, self.d_model), self.dtype),
        }

    def contribution(self, group, x, scaled=False):
        win = _maybe_scale(group.slices["win"], group, scaled)
        wconv = _maybe_scale(group.slices["wconv"], group, scaled)
        wout = _maybe_scale(group.slices["wout"], group, scaled)
        h = tt.glu(tt.matmul(x, win), axis=-1)
        h = tt.swish(tt.depthwise_conv1d(h, wconv))
        return tt.matmul(h, wout)


class CgMLPModule(GroupModule):
    """Gated MLP branch: activated value path gated by a depthwise-conv
    transform of a parallel linear path."""

    kind = ModuleKind.CGMLP

    def __init__(self, layer, d_model, half_width, kernel, dtype):
        super().__init__(layer, d_model, dtype)
        if kernel % 2 == 0:
            raise InvalidConfig(f"conv kernel must be odd, got {kernel}")
        self.half_width = half_width
        self.kernel = kernel

    def fresh_slices(self, rng, like=None) -> dict:
        h = self.half_width if like is None else like.slices["wa"].data.shape[1]
        d = self.d_model
        return {
            "wa": _uniform(rng, d, (d, h), self.dtype),
            "wb": _uniform(rng, d, (d, h), self.dtype),
            "wconv": _uniform(rng, self.kernel, (self.kernel, h), self.dtype),
            "wdown": _uniform(rng, h, (h, d), self.dtype),
        }

    def contribution(self, group, x, scaled=False):
        wa = _maybe_scale(group.slices["wa"], group, scaled)
        wb = _maybe_scale(group.slices["wb"], group, scaled)
        wconv = _maybe_scale(group.slices["wconv"], group, scaled)
        wdown = _maybe_scale(group.slices["wdown"], group, scaled)
        value = tt.swish(tt.matmul(x, wa))
        gate = tt.depthwise_conv1d(tt.matmul(x, wb), wconv)
        return tt.matmul(tt.mul(value, gate), wdown)


class Block:
    """One encoder layer: half-step FFNs around the mixing modules,
    pre-norm residual connections throughout."""

    def __init__(self, layer: int, architecture: str, d_model: int, dtype):
        self.layer = layer
        self.architecture = architecture
        self.d_model = d_model
        self.dtype = dtype
        self.modules: dict[ModuleKind, GroupModule] = {}
        self.norms: dict[ModuleKind, tuple[Tensor, Tensor]] = {}

    def kinds(self):
        if self.architecture == "conformer":
            return (ModuleKind.FFN1, ModuleKind.MHSA, ModuleKind.CONV, ModuleKind.FFN2)
        return (ModuleKind.FFN1, ModuleKind.MHSA, ModuleKind.CGMLP, ModuleKind.FFN2)

    def _normed(self, x, kind):
        gamma, beta = self.norms[kind]
        return tt.layer_norm(x, gamma, beta)

    def forward(self, x: Tensor, scaled=False) -> Tensor:
        K = ModuleKind
        x = tt.add(x, tt.scale(self.modules[K.FFN1].forward(self._normed(x, K.FFN1), scaled), 0.5))
        if self.architecture == "conformer":
            x = tt.add(x, self.modules[K.MHSA].forward(self._normed(x, K.MHSA), scaled))
            x = tt.add(x, self.modules[K.CONV].forward(self._normed(x, K.CONV), scaled))
        else:
            attn = self.modules[K.MHSA].forward(self._normed(x, K.MHSA), scaled)
            gmlp = self.modules[K.CGMLP].forward(self._normed(x, K.CGMLP), scaled)
            x = tt.add(x, tt.add(attn, gmlp))
        x = tt.add(x, tt.scale(self.modules[K.FFN2].forward(self._normed(x, K.FFN2), scaled), 0.5))
        return x


@dataclass
class ModelConfig:
    architecture: str = "conformer"
    d_model: int = 64
    L: int = 2
    k: int = 9
    C: int = 4
    M: int = 4
    vocab: int = 8
    seed: int = 1

    def __post_init__(self):
        if self.architecture not in ("conformer", "ebranchformer_lite"):
            raise InvalidConfig(f"unknown architecture {self.architecture!r}")
        for name in ("d_model", "L", "k", "C", "M", "vocab"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")


class PartitionedEncoder:
    """Linear subsampling frontend, L partitioned blocks, log-prob head."""

    def __init__(self, config: ModelConfig, feature_dim: int, dtype,
                 trainable_scales: bool, init_rng: np.random.Generator):
        self.config = config
        self.feature_dim = feature_dim
        self.dtype = dtype
        self.trainable_scales = trainable_scales
        self.scales_active = False
        self.init_rng = init_rng
        self.blocks: list[Block] = []
        d = config.d_model
        self.frontend_w = Tensor(
            _uniform(init_rng, 4 * feature_dim, (4 * feature_dim, d), dtype),
            requires_grad=True,
        )
        for layer in range(config.L):
            self.blocks.append(self._build_block(layer))
        self.final_gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.final_beta = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.head_w = Tensor(
            _uniform(init_rng, d, (d, config.vocab + 1), dtype), requires_grad=True
        )

    def _build_block(self, layer: int) -> Block:
        cfg = self.config
        d = cfg.d_model
        block = Block(layer, cfg.architecture, d, self.dtype)
        d_ff = 4 * d
        width = d_ff // cfg.C
        heads = max(1, d // 64)
        d_h = d // heads
        for kind in block.kinds():
            gamma = Tensor(np.ones(d, dtype=self.dtype), requires_grad=True)
            beta = Tensor(np.zeros(d, dtype=self.dtype), requires_grad=True)
            block.norms[kind] = (gamma, beta)
            if kind in (ModuleKind.FFN1, ModuleKind.FFN2):
                mod = FFNModule(layer, d, width, kind, self.dtype)
                count = cfg.C
            elif kind == ModuleKind.MHSA:
                mod = MHSAModule(layer, d, d_h, self.dtype)
                count = heads
            elif kind == ModuleKind.CONV:
                mod = ConvModule(layer, d, 4 * d // cfg.M, cfg.k, self.dtype)
                count = cfg.M
            else:
                mod = CgMLPModule(layer, d, 6 * d // (2 * cfg.M), cfg.k, self.dtype)
                count = cfg.M
            for _ in range(count):
                mod.add_group(
                    {n: Tensor(a, requires_grad=True) for n, a in mod.fresh_slices(self.init_rng).items()},
                    trainable_scale=self.trainable_scales,
                )
            block.modules[kind] = mod
        return block

    # -- forward -----------------------------------------------------------

    def forward(self, features, scaled=None) -> Tensor:
        """Features [T, f] to log-probabilities [T // 4, vocab + 1]."""
        data = features.data if isinstance(features, Tensor) else np.asarray(features)
        if data.ndim != 2 or data.shape[1] != self.feature_dim:
            raise InvalidShape(
                f"features must be [T, {self.feature_dim}], got {data.shape}"
            )
        if data.shape[0] < 4:
            raise InvalidShape("need at least 4 frames for the stride-4 frontend")
        if scaled is None:
            scaled = self.scales_active
        tprime = data.shape[0] // 4
        stacked = np.ascontiguousarray(
            data[: 4 * tprime].reshape(tprime, 4 * self.feature_dim), dtype=self.dtype
        )
        x = tt.matmul(Tensor(stacked), self.frontend_w)
        for block in self.blocks:
            x = block.forward(x, scaled)
        x = tt.layer_norm(x, self.final_gamma, self.final_beta)
        return tt.log_softmax(tt.matmul(x, self.head_w), axis=-1)

    # -- group registry ----------------------------------------------------

    def iter_modules(self):
        for block in self.blocks:
            for kind in block.kinds():
                yield block.modules[kind]

    def all_groups(self):
        out = []
        for mod in self.iter_modules():
            out.extend(mod.groups)
        return sorted(out, key=lambda g: g.id.sort_key())

    def group_by_id(self, gid: GroupId):
        for mod in self.iter_modules():
            for g in mod.groups:
                if g.id == gid:
                    return mod, g
        raise NotFound(f"no live group {gid}")

    def renumber_slots(self):
        for mod in self.iter_modules():
            mod.renumber()

    def group_contribution(self, gid: GroupId, x: Tensor, scaled=None) -> Tensor:
        if scaled is None:
            scaled = self.scales_active
        mod, group = self.group_by_id(gid)
        return mod.contribution(group, x, scaled)

    def enumerate_groups(self):
        return [(g.id, g.param_count, g.score) for g in self.all_groups()]

    def count_params(self, scope="all") -> int:
        groups = sum(g.param_count for g in self.all_groups())
        frontend = int(self.frontend_w.data.size)
        head = int(self.head_w.data.size)
        if scope == "encoder_groups":
            return groups
        if scope == "frontend":
            return frontend
        if scope == "head":
            return head
        if scope == "all":
            norms = sum(
                int(t.data.size)
                for block in self.blocks
                for pair in block.norms.values()
                for t in pair
            )
            norms += int(self.final_gamma.data.size) + int(self.final_beta.data.size)
            return groups + frontend + head + norms
        raise InvalidConfig(f"unknown scope {scope!r}")

    def parameters(self, include_scales=None) -> list[Tensor]:
        """Trainable tensors in a stable order; scale parameters are
        appended per group only when they are trainable."""
        if include_scales is None:
            include_scales = self.trainable_scales
        out = [self.frontend_w]
        for block in self.blocks:
            for kind in block.kinds():
                gamma, beta = block.norms[kind]
                out.extend((gamma, beta))
                for group in block.modules[kind].groups:
                    out.extend(group.slices.values())
                    if include_scales:
                        out.append(group.scale)
        out.extend((self.final_gamma, self.final_beta, self.head_w))
        return out

    def set_attention_capture(self, on: bool):
        for mod in self.iter_modules():
            if isinstance(mod, MHSAModule):
                mod.capture = on
                mod.last_attention = []


def build_model(cfg: ModelConfig, feature_dim=16, dtype=np.float32,
                trainable_scales=False) -> PartitionedEncoder:
    """Deterministically build a partitioned encoder from its config."""
    d = cfg.d_model
    if cfg.k % 2 == 0:
        raise InvalidConfig(f"conv kernel must be odd, got {cfg.k}")
    if (4 * d) % cfg.C != 0:
        raise InvalidConfig(f"d_ff={4 * d} is not divisible by C={cfg.C}")
    if (4 * d) % cfg.M != 0 or (4 * d // cfg.M) % 2 != 0:
        raise InvalidConfig(
            f"conv width {4 * d} must split into M={cfg.M} even-sized groups"
        )
    heads = max(1, d // 64)
    if d % heads != 0:
        raise InvalidConfig(f"d_model={d} is not divisible by {heads} heads")
    if cfg.architecture == "ebranchformer_lite":
        if (6 * d) % (2 * cfg.M) != 0:
            raise InvalidConfig(
                f"gated-MLP width {6 * d} must split into M={cfg.M} even-sized groups"
            )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    return PartitionedEncoder(cfg, feature_dim, dtype, trainable_scales, rng)


def forward(model: PartitionedEncoder, features) -> Tensor:
    return model.forward(features)


def group_contribution(model, gid: GroupId, x) -> Tensor:
    return model.group_contribution(gid, x)


def enumerate_groups(model):
    return model.enumerate_groups()


def count_params(model, scope="all") -> int:
    return model.count_params(scope)
