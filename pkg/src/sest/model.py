"""Desk-scale event saliency model.

Pipeline: per-bin windowed-attention encoder over a flattened (B*T) batch,
per-stage 3x3x3 projections fused at stage-1 resolution, a conv/BN/LeakyReLU
refinement block, a one-channel output head upsampled to input size, a
learnable multiplicative center bias, Gaussian blur and a sigmoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import NonFiniteActivation, ShapeMismatch, UsageError, WindowMismatch
from .event_core import VoxelGrid
from .tensor_engine import ops
from .tensor_engine.tensor import Parameter, Tensor

PATCH = 4
BIN_MENU = (7, 10, 14, 21)


@dataclass(frozen=True)
class StageConfig:
    depth: int
    channels: int
    downsample: int
    window: int
    heads: int


def _toy_stages() -> tuple[StageConfig, ...]:
    return (
        StageConfig(1, 16, PATCH, 4, 1),
        StageConfig(1, 32, 2, 4, 2),
        StageConfig(1, 64, 2, 4, 4),
        StageConfig(1, 128, 2, 4, 4),
    )


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 64
    bins: int = 2
    fusion_depth: int = 32
    stages: tuple[StageConfig, ...] = field(default_factory=_toy_stages)
    mlp_ratio: int = 4
    blur_sigma: float = 2.0
    blur_radius: int = 4
    center_bias: bool = True
    decoder: str = "conv3d"
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    ln_eps: float = 1e-5

    def __post_init__(self) -> None:
        if len(self.stages) != 4:
            raise UsageError(f"expected 4 encoder stages, got {len(self.stages)}")
        if self.bins < 1:
            raise UsageError("bins must be >= 1")
        if self.decoder not in ("conv3d", "conv2d"):
            raise UsageError(f"decoder must be conv3d or conv2d, got {self.decoder!r}")
        total = PATCH * 2 ** (len(self.stages) - 1)
        if self.height % total or self.width % total:
            raise UsageError(f"input {self.height}x{self.width} not divisible by {total}")
        expected = (PATCH, 2, 2, 2)
        for i, (s, ds) in enumerate(zip(self.stages, expected)):
            if s.downsample != ds:
                raise UsageError(f"stage {i + 1} downsample must be {ds}, got {s.downsample}")
            if s.channels % s.heads:
                raise UsageError(f"stage {i + 1}: {s.channels} channels not divisible by {s.heads} heads")
            if i and s.channels != 2 * self.stages[i - 1].channels:
                raise UsageError(f"stage {i + 1} must double the channels of stage {i}")
            hs, ws = self.stage_side(i)
            win = self.stage_window(i)
            if hs % win or ws % win:
                raise WindowMismatch(f"stage {i + 1} side {hs}x{ws} not divisible by window {win}")

    def stage_side(self, i: int) -> tuple[int, int]:
        f = PATCH * 2 ** i
        return self.height // f, self.width // f

    def stage_window(self, i: int) -> int:
        # a window larger than the feature map shrinks to cover it, as in Swin
        return min(self.stages[i].window, *self.stage_side(i))


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    s = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


class SestModel:
    """Parameter container plus the mutable batch-norm running statistics."""

    def __init__(self, cfg: ModelConfig, seed: int = 0) -> None:
        self.cfg = cfg
        self.training = True
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)

        def param(name, shape, fan_in=None, value=None):
            if value is None:
                value = _uniform(rng, shape, fan_in)
            self.params[name] = Parameter(value, name)

        c1 = cfg.stages[0].channels
        param("embed.w", (c1, 2, PATCH, PATCH), 2 * PATCH * PATCH)
        param("embed.b", None, value=np.zeros(c1))
        prev = c1
        for i, st in enumerate(cfg.stages, 1):
            c = st.channels
            if i > 1:
                param(f"s{i}.merge.w", (4 * prev, c), 4 * prev)
            hidden = cfg.mlp_ratio * c
            for j in range(st.depth):
                p = f"s{i}.b{j}"
                param(f"{p}.ln1.g", None, value=np.ones(c))
                param(f"{p}.ln1.b", None, value=np.zeros(c))
                param(f"{p}.qkv.w", (c, 3 * c), c)
                param(f"{p}.qkv.b", None, value=np.zeros(3 * c))
                param(f"{p}.proj.w", (c, c), c)
                param(f"{p}.proj.b", None, value=np.zeros(c))
                param(f"{p}.ln2.g", None, value=np.ones(c))
                param(f"{p}.ln2.b", None, value=np.zeros(c))
                param(f"{p}.fc1.w", (c, hidden), c)
                param(f"{p}.fc1.b", None, value=np.zeros(hidden))
                param(f"{p}.fc2.w", (hidden, c), hidden)
                param(f"{p}.fc2.b", None, value=np.zeros(c))
            prev = c

        d = cfg.fusion_depth
        k = (3, 3, 3) if cfg.decoder == "conv3d" else (3, 3)
        kvol = int(np.prod(k))
        for i, st in enumerate(cfg.stages, 1):
            param(f"fuse{i}.w", (d, st.channels) + k, st.channels * kvol)
            param(f"fuse{i}.b", None, value=np.zeros(d))
        param("refine.w", (d, 4 * d) + k, 4 * d * kvol)
        param("refine.b", None, value=np.zeros(d))
        param("bn.g", None, value=np.ones(d))
        param("bn.b", None, value=np.zeros(d))
        param("out.w", (1, d) + k, d * kvol)
        param("out.b", None, value=np.zeros(1))
        if cfg.center_bias:
            param("center_bias", None, value=rng.uniform(0.0, 1.0, size=(cfg.height, cfg.width)))
        self.buffers["bn.running_mean"] = np.zeros(d)
        self.buffers["bn.running_var"] = np.ones(d)

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def train(self, mode: bool = True) -> "SestModel":
        self.training = mode
        return self

    def eval(self) -> "SestModel":
        return self.train(False)

    def state_dict(self, optimizer: bool = False) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.params.items()}
        for name, b in self.buffers.items():
            out[name] = b.copy()
        if optimizer:
            for name, p in self.params.items():
                out[f"{name}.adam_m"] = p.m.copy()
                out[f"{name}.adam_v"] = p.v.copy()
                out[f"{name}.adam_step"] = np.array(float(p.step))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        known = set(self.params) | set(self.buffers)
        core = {k for k in state if not k.endswith((".adam_m", ".adam_v", ".adam_step"))}
        missing, extra = known - core, core - known
        if missing or extra:
            raise ShapeMismatch(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
            if f"{name}.adam_m" in state:
                p.m = np.array(state[f"{name}.adam_m"], dtype=np.float64)
                p.v = np.array(state[f"{name}.adam_v"], dtype=np.float64)
                p.step = int(state[f"{name}.adam_step"])
        for name in self.buffers:
            self.buffers[name] = np.array(state[name], dtype=np.float64)

    def copy(self) -> "SestModel":
        other = SestModel.__new__(SestModel)
        other.cfg = self.cfg
        other.training = self.training
        other.params = {}
        for name, p in self.params.items():
            q = Parameter(p.data, name)
            q.m, q.v, q.step = p.m.copy(), p.v.copy(), p.step
            other.params[name] = q
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other


def variant_config(cfg: ModelConfig, **changes) -> ModelConfig:
    return replace(cfg, **changes)


# ---------------------------------------------------------------- reshaping

def flatten_time(x: Tensor) -> Tensor:
    if x.ndim != 5:
        raise ShapeMismatch(f"expected [B,T,C,H,W], got {x.shape}")
    b, t = x.shape[:2]
    return x.reshape((b * t,) + x.shape[2:])


def unflatten_time(x: Tensor, bins: int) -> Tensor:
    if x.shape[0] % bins:
        raise ShapeMismatch(f"leading dim {x.shape[0]} not divisible by T={bins}")
    return x.reshape((x.shape[0] // bins, bins) + x.shape[1:])


# ---------------------------------------------------------------- encoder

def _linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = ops.matmul(x, w)
    return y if b is None else y + b


def window_attention(z: Tensor, model: SestModel, prefix: str, window: int, heads: int) -> Tensor:
    """Multi-head self-attention inside non-overlapping window x window tiles.

    ``z`` is channels-last [N, h, w, C].
    """
    n, h, w, c = z.shape
    if h % window or w % window:
        raise WindowMismatch(f"feature map {h}x{w} not divisible by window {window}")
    nh, nw, L, dh = h // window, w // window, window * window, c // heads
    t = z.reshape(n, nh, window, nw, window, c).transpose(0, 1, 3, 2, 4, 5).reshape(n * nh * nw, L, c)
    qkv = _linear(t, model[f"{prefix}.qkv.w"], model[f"{prefix}.qkv.b"])
    qkv = qkv.reshape(-1, L, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    att = ops.softmax(ops.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)), axis=-1)
    o = ops.matmul(att, v).transpose(0, 2, 1, 3).reshape(-1, L, c)
    o = _linear(o, model[f"{prefix}.proj.w"], model[f"{prefix}.proj.b"])
    return o.reshape(n, nh, nw, window, window, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, w, c)


def _block(z: Tensor, model: SestModel, prefix: str, window: int, heads: int) -> Tensor:
    cfg = model.cfg
    y = ops.layer_norm(z, model[f"{prefix}.ln1.g"], model[f"{prefix}.ln1.b"], cfg.ln_eps)
    z = z + window_attention(y, model, prefix, window, heads)
    y = ops.layer_norm(z, model[f"{prefix}.ln2.g"], model[f"{prefix}.ln2.b"], cfg.ln_eps)
    y = ops.leaky_relu(_linear(y, model[f"{prefix}.fc1.w"], model[f"{prefix}.fc1.b"]), cfg.leaky_slope)
    return z + _linear(y, model[f"{prefix}.fc2.w"], model[f"{prefix}.fc2.b"])


def patch_merge(z: Tensor, w: Tensor) -> Tensor:
    """2x2 space-to-channel rearrangement followed by a 4C -> 2C projection."""
    n, h, wd, c = z.shape
    t = z.reshape(n, h // 2, 2, wd // 2, 2, c).transpose(0, 1, 3, 4, 2, 5).reshape(n, h // 2, wd // 2, 4 * c)
    return ops.matmul(t, w)


def encode(x: Tensor, model: SestModel, bins: int) -> list[Tensor]:
    """Per-bin hierarchical features; ``x`` is the flattened [B*T, 2, H, W] batch.

    Returns four tensors shaped [B, T, C_i, H_i, W_i].
    """
    cfg = model.cfg
    if x.ndim != 4 or x.shape[1] != 2:
        raise ShapeMismatch(f"encoder expects [B*T, 2, H, W], got {x.shape}")
    if x.shape[2:] != (cfg.height, cfg.width):
        raise ShapeMismatch(f"input {x.shape[2:]} != configured {(cfg.height, cfg.width)}")
    z = ops.conv2d(x, model["embed.w"], model["embed.b"], stride=PATCH)
    z = z.transpose(0, 2, 3, 1)
    feats = []
    for i, st in enumerate(cfg.stages):
        if i:
            z = patch_merge(z, model[f"s{i + 1}.merge.w"])
        win = cfg.stage_window(i)
        for j in range(st.depth):
            z = _block(z, model, f"s{i + 1}.b{j}", win, st.heads)
        feats.append(unflatten_time(z.transpose(0, 3, 1, 2), bins))
    return feats


# ---------------------------------------------------------------- decoder

def decoder_conv(x: Tensor, w: Tensor, b: Tensor, kind: str) -> Tensor:
    """Padded 3x3(x3) convolution on [B, C, T, H, W].

    ``conv2d`` applies the same spatial kernel to each bin independently.
    """
    if kind == "conv3d":
        return ops.conv3d(x, w, b, pad=1)
    bsz, c, t, h, wd = x.shape
    flat = x.transpose(0, 2, 1, 3, 4).reshape(bsz * t, c, h, wd)
    y = ops.conv2d(flat, w, b, pad=1)
    return y.reshape(bsz, t, y.shape[1], h, wd).transpose(0, 2, 1, 3, 4)


def fuse(feats: Sequence[Tensor], model: SestModel) -> Tensor:
    """Project each stage to ``fusion_depth`` channels, upsample to stage-1 size, concatenate.

    Input and output use the [B, T, C, H, W] layout.
    """
    if len(feats) != 4:
        raise ShapeMismatch(f"expected 4 stage tensors, got {len(feats)}")
    bt = feats[0].shape[:2]
    if any(f.ndim != 5 or f.shape[:2] != bt for f in feats):
        raise ShapeMismatch("stage tensors disagree on (B, T)")
    h1, w1 = feats[0].shape[3:]
    parts = []
    for i, f in enumerate(feats, 1):
        y = decoder_conv(f.transpose(0, 2, 1, 3, 4), model[f"fuse{i}.w"], model[f"fuse{i}.b"], model.cfg.decoder)
        if i > 1:
            y = ops.upsample_trilinear(y, h1, w1)
        parts.append(y)
    return ops.concat(parts, axis=1).transpose(0, 2, 1, 3, 4)


def refine(u: Tensor, model: SestModel, update_stats: bool = True) -> Tensor:
    cfg = model.cfg
    if u.ndim != 5 or u.shape[2] != 4 * cfg.fusion_depth:
        raise ShapeMismatch(f"expected [B,T,{4 * cfg.fusion_depth},H,W], got {u.shape}")
    y = decoder_conv(u.transpose(0, 2, 1, 3, 4), model["refine.w"], model["refine.b"], cfg.decoder)
    y, rm, rv = ops.batch_norm3d(
        y,
        model["bn.g"],
        model["bn.b"],
        model.buffers["bn.running_mean"],
        model.buffers["bn.running_var"],
        training=model.training,
        momentum=cfg.bn_momentum,
        eps=cfg.bn_eps,
    )
    if model.training and update_stats:
        model.buffers["bn.running_mean"] = rm
        model.buffers["bn.running_var"] = rv
    return ops.leaky_relu(y, cfg.leaky_slope).transpose(0, 2, 1, 3, 4)


def reconstruct(z: Tensor, model: SestModel) -> Tensor:
    cfg = model.cfg
    if z.ndim != 5 or z.shape[2] != cfg.fusion_depth:
        raise ShapeMismatch(f"expected [B,T,{cfg.fusion_depth},H,W], got {z.shape}")
    y = decoder_conv(z.transpose(0, 2, 1, 3, 4), model["out.w"], model["out.b"], cfg.decoder)
    y = ops.upsample_trilinear(y, cfg.height, cfg.width)
    return y.transpose(0, 2, 1, 3, 4)


def apply_center_bias(y: Tensor, bias: Tensor) -> Tensor:
    """Multiplicative spatial gain ``y * (1 + bias)`` broadcast over all leading axes."""
    if tuple(bias.shape) != tuple(y.shape[-2:]):
        raise ShapeMismatch(f"center bias {bias.shape} does not match map {y.shape[-2:]}")
    return ops.mul(y, ops.add(bias, 1.0))


def prepare_input(x) -> Tensor:
    """Accept a [B,T,2,H,W] tensor/array or a sequence of voxel grids."""
    if isinstance(x, VoxelGrid):
        x = [x]
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], VoxelGrid):
        return Tensor(np.stack([g.to_model_input() for g in x]))
    return x if isinstance(x, Tensor) else Tensor(x)


def logits(x, model: SestModel, update_stats: bool = True) -> Tensor:
    """Everything up to, but excluding, the final sigmoid."""
    cfg = model.cfg
    x = prepare_input(x)
    if x.ndim != 5 or x.shape[2:] != (2, cfg.height, cfg.width):
        raise ShapeMismatch(f"expected [B,T,2,{cfg.height},{cfg.width}], got {x.shape}")
    bins = x.shape[1]
    feats = encode(flatten_time(x), model, bins)
    y = reconstruct(refine(fuse(feats, model), model, update_stats), model)
    if cfg.center_bias:
        y = apply_center_bias(y, model["center_bias"])
    return ops.gaussian_blur2d(y, cfg.blur_sigma, cfg.blur_radius)


def forward(x, model: SestModel, update_stats: bool = True) -> Tensor:
    """Saliency maps [B, T, 1, H, W] with values in (0, 1)."""
    out = ops.sigmoid(logits(x, model, update_stats))
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteActivation("model produced non-finite saliency")
    return out
