"""Toy convolutional backbone with named style-insertion points.

Four convolution blocks (``stem``, ``stage1``, ``stage2``, ``stage3``) in
pre-activation order: every block after the stem is ``conv(relu(h))``, and
a final ReLU precedes global average pooling and the linear classifier. No
batch normalization. The output of each of the first three blocks is an
insertion point where a style transform may rewrite the activations on
their way to the next block; these are linear conv outputs, so a global
affine change of the input pixels shows up there as a per-channel affine
change of the statistics.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .io_utils import atomic_write_bytes
from .layers import Conv2d, conv_out_size, relu

BLOCKS = ("stem", "stage1", "stage2", "stage3")
INSERTION_POINTS = ("post_stem", "post_stage1", "post_stage2")

# hook(activations) -> (new_activations, backward_fn or None)
Hook = Callable[[np.ndarray], tuple]


class BackboneConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int = 3
    widths: tuple[int, ...] = (8, 24, 48, 48)
    strides: tuple[int, ...] = (1, 2, 2, 2)
    n_classes: int = 4
    image_size: int = 32
    frozen: tuple[str, ...] = ("stem", "stage1")
    dtype: str = "float32"
    # fixed pixel standardization applied before the stem
    input_mean: float = 0.5
    input_std: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "frozen", tuple(self.frozen))
        if len(self.widths) != len(BLOCKS) or len(self.strides) != len(BLOCKS):
            raise BackboneConfigError(f"widths and strides need {len(BLOCKS)} entries")
        if min(self.widths) < 1 or min(self.strides) < 1:
            raise BackboneConfigError("widths and strides must be positive")
        if self.in_channels < 1 or self.image_size < 1:
            raise BackboneConfigError("in_channels and image_size must be positive")
        if self.n_classes < 2:
            raise BackboneConfigError("need at least two classes")
        unknown = set(self.frozen) - set(BLOCKS)
        if unknown:
            raise BackboneConfigError(f"unknown frozen blocks: {sorted(unknown)}")
        if "stem" not in self.frozen:
            raise BackboneConfigError("the stem must be frozen")
        if not self.input_std > 0:
            raise BackboneConfigError("input_std must be positive")
        if self.dtype not in ("float32", "float64"):
            raise BackboneConfigError(f"unsupported dtype {self.dtype!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise BackboneConfigError(f"unknown arch fields: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("widths", "strides", "frozen"):
            d[k] = list(d[k])
        return d


@dataclass
class ForwardCache:
    x_shape: tuple
    convs: dict = field(default_factory=dict)
    pre_act: dict = field(default_factory=dict)
    hook_bwd: dict = field(default_factory=dict)
    pooled: np.ndarray | None = None
    last_hw: int = 1


class Backbone:
    def __init__(self, arch: ArchConfig, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params
        self.convs = {
            name: Conv2d(params[f"{name}.weight"], params[f"{name}.bias"], stride=s, pad=1)
            for name, s in zip(BLOCKS, arch.strides)
        }

    @property
    def dtype(self):
        return np.dtype(self.arch.dtype)

    @property
    def trainable(self) -> list[str]:
        names = [f"{b}.{p}" for b in BLOCKS if b not in self.arch.frozen for p in ("weight", "bias")]
        return names + ["head.weight", "head.bias"]

    def feature_shape(self, point: str) -> tuple[int, int, int]:
        """(C, H, W) of the activations at an insertion point."""
        idx = _point_index(point)
        size = self.arch.image_size
        for s in self.arch.strides[: idx + 1]:
            size = conv_out_size(size, 3, s, 1)
        return self.arch.widths[idx], size, size

    def fingerprint(self) -> str:
        """SHA-256 over the frozen blocks' parameters."""
        h = hashlib.sha256()
        for b in BLOCKS:
            if b not in self.arch.frozen:
                continue
            for p in ("weight", "bias"):
                arr = np.ascontiguousarray(self.params[f"{b}.{p}"], dtype="<f8")
                h.update(f"{b}.{p}{arr.shape}".encode())
                h.update(arr.tobytes())
        return h.hexdigest()

    def copy(self) -> "Backbone":
        return Backbone(self.arch, {k: v.copy() for k, v in self.params.items()})

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise BackboneConfigError(
                f"expected input (B, {self.arch.in_channels}, H, W), got {x.shape}"
            )
        return (x - self.dtype.type(self.arch.input_mean)) / self.dtype.type(self.arch.input_std)

    def forward(
        self,
        x,
        *,
        stop_at: str | None = None,
        hooks: dict[str, Hook] | None = None,
        need_cache: bool = False,
    ):
        """Logits, or the activations at ``stop_at`` (after its hook, if any)."""
        if stop_at is not None:
            _point_index(stop_at)
        h = self._prepare(x)
        cache = ForwardCache(x_shape=h.shape) if need_cache else None
        hooks = hooks or {}
        for i, name in enumerate(BLOCKS):
            if i > 0:
                if need_cache:
                    cache.pre_act[name] = h
                h = relu(h)
            if need_cache:
                h, cache.convs[name] = self.convs[name].forward(h, need_cache=True)
            else:
                h = self.convs[name].forward(h)
            point = f"post_{name}"
            if point in hooks:
                h, bwd = hooks[point](h)
                h = np.asarray(h, dtype=self.dtype)
                if need_cache:
                    cache.hook_bwd[point] = bwd
            if point == stop_at:
                return (h, cache) if need_cache else h
        if need_cache:
            cache.pre_act["head"] = h
        h = relu(h)
        pooled = h.mean(axis=(2, 3))
        logits = pooled @ self.params["head.weight"] + self.params["head.bias"]
        if need_cache:
            cache.pooled = pooled
            cache.last_hw = h.shape[2] * h.shape[3]
            return logits, cache
        return logits

    def backward(self, dlogits: np.ndarray, cache: ForwardCache) -> dict[str, np.ndarray]:
        grads = {
            "head.weight": cache.pooled.T @ dlogits,
            "head.bias": dlogits.sum(axis=0),
        }
        dpooled = dlogits @ self.params["head.weight"].T
        pre = cache.pre_act["head"]
        dh = np.broadcast_to(
            (dpooled / cache.last_hw)[:, :, None, None], pre.shape
        ) * (pre > 0)
        dh = dh.astype(self.dtype, copy=False)
        lowest_trainable = min(
            (i for i, b in enumerate(BLOCKS) if b not in self.arch.frozen), default=len(BLOCKS)
        )
        for i in range(len(BLOCKS) - 1, lowest_trainable - 1, -1):
            name = BLOCKS[i]
            bwd = cache.hook_bwd.get(f"post_{name}")
            if bwd is not None:
                dh = bwd(dh)
            need_dx = i > lowest_trainable
            dx, dw, db = self.convs[name].backward(dh, cache.convs[name], need_dx=need_dx)
            if name not in self.arch.frozen:
                grads[f"{name}.weight"] = dw
                grads[f"{name}.bias"] = db
            if need_dx:
                dh = dx * (cache.pre_act[name] > 0)
        return grads

    def features(self, x, point: str) -> np.ndarray:
        return self.forward(x, stop_at=point)

    def save(self, path) -> None:
        path = Path(path)
        arrays = {k: v for k, v in self.params.items()}
        arrays["__arch__"] = np.frombuffer(json.dumps(self.arch.to_dict()).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path) -> "Backbone":
        with np.load(Path(path)) as data:
            arch = ArchConfig.from_dict(json.loads(bytes(data["__arch__"]).decode()))
            params = {k: data[k].copy() for k in data.files if k != "__arch__"}
        return cls(arch, params)


def _point_index(point: str) -> int:
    if point not in INSERTION_POINTS:
        raise BackboneConfigError(
            f"unknown insertion point {point!r}; expected one of {INSERTION_POINTS}"
        )
    return INSERTION_POINTS.index(point)


def build_backbone(arch: ArchConfig | dict | None = None, seed: int = 0) -> Backbone:
    """He-initialized backbone; identical seeds give identical weights."""
    if arch is None:
        arch = ArchConfig()
    elif isinstance(arch, dict):
        arch = ArchConfig.from_dict(arch)
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    dtype = np.dtype(arch.dtype)
    params: dict[str, np.ndarray] = {}
    cin = arch.in_channels
    for name, cout in zip(BLOCKS, arch.widths):
        fan_in = cin * 9
        params[f"{name}.weight"] = (rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"{name}.bias"] = np.zeros(cout, dtype=dtype)
        cin = cout
    params["head.weight"] = (rng.standard_normal((cin, arch.n_classes)) * np.sqrt(1.0 / cin)).astype(dtype)
    params["head.bias"] = np.zeros(arch.n_classes, dtype=dtype)
    return Backbone(arch, params)
