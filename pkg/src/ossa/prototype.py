"""Target-domain style prototypes.

A prototype holds, for each insertion point, the channel means and
standard deviations of one (or a few, averaged) unlabeled target images,
together with the fingerprint of the frozen backbone blocks that produced
them. It is computed once and reused for every training step.

File format (JSON, schema 1)::

    {
      "schema_version": 1,
      "backbone_fingerprint": "<sha256 hex>",
      "image_ids": ["..."],
      "image_count": 1,
      "seed": 0,
      "layers": {"post_stem": {"mu": [...], "sigma": [...]}, ...},
      "created_at": "2026-01-01T00:00:00+00:00"    # optional
    }

Unknown keys are rejected. Floats are written with ``repr`` precision so a
save/load round-trip is exact.
"""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backbone import INSERTION_POINTS, Backbone
from .domains import Dataset, load_image
from .io_utils import atomic_write_text
from .stats import DEFAULT_EPS, ChannelStats, InvalidInputError, channel_stats

SCHEMA_VERSION = 1
_REQUIRED_KEYS = {"schema_version", "backbone_fingerprint", "image_ids", "image_count", "seed", "layers"}
_OPTIONAL_KEYS = {"created_at"}


class PrototypeError(ValueError):
    pass


class PrototypeMismatchError(PrototypeError):
    """Prototype and backbone (or another prototype) are incompatible."""


@dataclass(frozen=True)
class StylePrototype:
    layers: dict[str, ChannelStats]
    backbone_fingerprint: str
    image_ids: tuple[str, ...] = ()
    image_count: int = 1
    seed: int = 0
    created_at: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise PrototypeError("prototype has no layers")
        for name, st in self.layers.items():
            if name not in INSERTION_POINTS:
                raise PrototypeError(f"unknown insertion point {name!r} in prototype")
            if st.shape[0] != 1:
                raise PrototypeError(f"layer {name!r} must hold a single (1, C) stats row")
        if not self.backbone_fingerprint:
            raise PrototypeError("prototype is missing its backbone fingerprint")
        if self.image_count < 1:
            raise PrototypeError("image_count must be >= 1")
        object.__setattr__(self, "image_ids", tuple(self.image_ids))

    def __eq__(self, other):
        if not isinstance(other, StylePrototype):
            return NotImplemented
        return (
            self.backbone_fingerprint == other.backbone_fingerprint
            and self.image_ids == other.image_ids
            and self.image_count == other.image_count
            and self.seed == other.seed
            and self.layers.keys() == other.layers.keys()
            and all(
                np.array_equal(self.layers[k].mu, other.layers[k].mu)
                and np.array_equal(self.layers[k].sigma, other.layers[k].sigma)
                for k in self.layers
            )
        )

    def check_compatible(self, backbone: Backbone, layers: Iterable[str] = ()) -> None:
        fp = backbone.fingerprint()
        if fp != self.backbone_fingerprint:
            raise PrototypeMismatchError(
                f"prototype was extracted with backbone {self.backbone_fingerprint[:12]}..., "
                f"training backbone is {fp[:12]}..."
            )
        for name in layers:
            if name not in self.layers:
                raise PrototypeMismatchError(f"prototype has no statistics for layer {name!r}")
            c = backbone.feature_shape(name)[0]
            if self.layers[name].shape[1] != c:
                raise PrototypeMismatchError(
                    f"layer {name!r}: prototype has {self.layers[name].shape[1]} channels, backbone {c}"
                )

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "backbone_fingerprint": self.backbone_fingerprint,
            "image_ids": list(self.image_ids),
            "image_count": int(self.image_count),
            "seed": int(self.seed),
            "layers": {
                name: {"mu": st.mu[0].tolist(), "sigma": st.sigma[0].tolist()}
                for name, st in sorted(self.layers.items(), key=lambda kv: INSERTION_POINTS.index(kv[0]))
            },
        }
        if self.created_at is not None:
            d["created_at"] = self.created_at
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StylePrototype":
        if not isinstance(d, dict):
            raise PrototypeError("prototype document must be a JSON object")
        unknown = set(d) - _REQUIRED_KEYS - _OPTIONAL_KEYS
        if unknown:
            raise PrototypeError(f"unknown prototype keys: {sorted(unknown)}")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise PrototypeError(
                f"unsupported prototype schema_version {d.get('schema_version')!r}, expected {SCHEMA_VERSION}"
            )
        missing = _REQUIRED_KEYS - set(d)
        if missing:
            raise PrototypeError(f"prototype is missing keys: {sorted(missing)}")
        fp = d["backbone_fingerprint"]
        if not isinstance(fp, str) or not fp:
            raise PrototypeError("backbone_fingerprint must be a non-empty hex string")
        layers = {}
        for name, entry in d["layers"].items():
            if set(entry) != {"mu", "sigma"}:
                raise PrototypeError(f"layer {name!r} must have exactly 'mu' and 'sigma'")
            mu = np.asarray(entry["mu"], dtype=np.float64)
            sigma = np.asarray(entry["sigma"], dtype=np.float64)
            if mu.ndim != 1 or mu.shape != sigma.shape:
                raise PrototypeError(f"layer {name!r}: mu and sigma must be equal-length lists")
            try:
                layers[name] = ChannelStats(mu[None], sigma[None])
            except InvalidInputError as exc:
                raise PrototypeError(f"layer {name!r}: {exc}") from exc
        return cls(
            layers=layers,
            backbone_fingerprint=fp,
            image_ids=tuple(str(i) for i in d["image_ids"]),
            image_count=int(d["image_count"]),
            seed=int(d["seed"]),
            created_at=d.get("created_at"),
        )


def _as_batch(images, size: int) -> tuple[np.ndarray, list[str]]:
    if isinstance(images, Dataset):
        return images.images, list(images.ids)
    if isinstance(images, np.ndarray) and images.ndim == 4:
        return images, [str(i) for i in range(len(images))]
    arrays, ids = [], []
    for i, item in enumerate(images):
        if isinstance(item, (str, Path)):
            arrays.append(load_image(item, size))
            ids.append(Path(item).name)
        else:
            arr = np.asarray(item, dtype=np.float32)
            if arr.ndim != 3:
                raise PrototypeError(f"image {i} must be (C, H, W), got shape {arr.shape}")
            arrays.append(arr)
            ids.append(str(i))
    if not arrays:
        raise PrototypeError("need at least one image to extract a prototype")
    return np.stack(arrays), ids


def per_image_stats(
    backbone: Backbone, images, layers: Sequence[str], eps: float = DEFAULT_EPS
) -> dict[str, ChannelStats]:
    """Channel statistics of every image at every requested layer, ``(K, C)`` each."""
    batch, _ = _as_batch(images, backbone.arch.image_size)
    return _collect(backbone, batch, layers, eps)


def _collect(backbone: Backbone, batch: np.ndarray, layers: Sequence[str], eps: float):
    layers = list(dict.fromkeys(layers))
    if not layers:
        raise PrototypeError("no layers requested")
    for name in layers:
        if name not in INSERTION_POINTS:
            raise PrototypeError(f"unknown insertion point {name!r}; expected one of {INSERTION_POINTS}")
    deepest = max(layers, key=INSERTION_POINTS.index)
    captured: dict[str, np.ndarray] = {}

    def recorder(name):
        def hook(h):
            captured[name] = h
            return h, None

        return hook

    mus: dict[str, list] = {n: [] for n in layers}
    sigmas: dict[str, list] = {n: [] for n in layers}
    for start in range(0, len(batch), 64):
        captured.clear()
        backbone.forward(batch[start : start + 64], stop_at=deepest, hooks={n: recorder(n) for n in layers})
        for n in layers:
            st = channel_stats(captured[n], eps)
            mus[n].append(st.mu)
            sigmas[n].append(st.sigma)
    return {n: ChannelStats(np.concatenate(mus[n]), np.concatenate(sigmas[n])) for n in layers}


def extract_prototype(
    backbone: Backbone,
    images,
    layers: Sequence[str] = INSERTION_POINTS,
    eps: float = DEFAULT_EPS,
    *,
    seed: int = 0,
    image_ids: Sequence[str] | None = None,
    timestamp: bool = False,
) -> StylePrototype:
    """Per-layer channel stats of ``images``, averaged over images.

    ``images`` is a list of (C, H, W) arrays or image paths, a (K, C, H, W)
    array, or a ``Dataset``. Backbone weights are not modified.
    """
    batch, ids = _as_batch(images, backbone.arch.image_size)
    if len(batch) == 0:
        raise PrototypeError("need at least one image to extract a prototype")
    stats = _collect(backbone, batch, layers, eps)
    averaged = {
        n: ChannelStats(st.mu.mean(axis=0, keepdims=True), st.sigma.mean(axis=0, keepdims=True))
        for n, st in stats.items()
    }
    return StylePrototype(
        layers=averaged,
        backbone_fingerprint=backbone.fingerprint(),
        image_ids=tuple(image_ids) if image_ids is not None else tuple(ids),
        image_count=len(batch),
        seed=seed,
        created_at=_now() if timestamp else None,
    )


def average_prototypes(protos: Sequence[StylePrototype]) -> StylePrototype:
    """Unweighted mean of mu and of sigma across prototypes, per layer."""
    protos = list(protos)
    if not protos:
        raise PrototypeError("nothing to average")
    first = protos[0]
    if len(protos) == 1:
        return first
    for p in protos[1:]:
        if p.backbone_fingerprint != first.backbone_fingerprint:
            raise PrototypeMismatchError("cannot average prototypes from different backbones")
        if p.layers.keys() != first.layers.keys():
            raise PrototypeMismatchError("cannot average prototypes with different layer sets")
        for n in first.layers:
            if p.layers[n].shape != first.layers[n].shape:
                raise PrototypeMismatchError(f"layer {n!r} channel counts differ")
    layers = {
        n: ChannelStats(
            np.mean([p.layers[n].mu for p in protos], axis=0),
            np.mean([p.layers[n].sigma for p in protos], axis=0),
        )
        for n in first.layers
    }
    return StylePrototype(
        layers=layers,
        backbone_fingerprint=first.backbone_fingerprint,
        image_ids=tuple(i for p in protos for i in p.image_ids),
        image_count=sum(p.image_count for p in protos),
        seed=first.seed,
    )


def save_prototype(p: StylePrototype, path) -> Path:
    return atomic_write_text(path, json.dumps(p.to_dict(), indent=2) + "\n")


def load_prototype(path) -> StylePrototype:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PrototypeError(f"cannot read prototype {path}: {exc}") from exc
    return StylePrototype.from_dict(doc)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
