"""Procedural source/target image domains with a controllable style gap.

Content is a coloured geometric shape on a smooth textured background; the
class is the shape type. Style (contrast, colour shift, fog) is applied
deterministically on top of the content, so two specs that differ only in
style fields give pixel-aligned images with identical labels.

Images are channel-first float32 arrays in [0, 1], quantized to 8-bit
levels so that PNG round-trips are exact.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .io_utils import atomic_write_bytes, atomic_write_json

SHAPES = ("disk", "square", "triangle", "cross", "ring", "diamond")
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
DEFAULT_FOG_COLOR = (0.8, 0.8, 0.8)


class DomainSpecError(ValueError):
    pass


@dataclass(frozen=True)
class StyleSpec:
    fog_intensity: float = 0.0
    fog_color: tuple[float, float, float] = DEFAULT_FOG_COLOR
    contrast: float = 1.0
    color_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    blur_sigma: float = 0.7
    # per-image fog intensity is drawn from U(t - jitter, t + jitter), clipped
    fog_jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "fog_color", tuple(float(v) for v in self.fog_color))
        object.__setattr__(self, "color_shift", tuple(float(v) for v in self.color_shift))
        if not 0.0 <= self.fog_intensity <= 1.0:
            raise DomainSpecError(f"fog_intensity must lie in [0, 1], got {self.fog_intensity}")
        if len(self.fog_color) != 3 or not all(0.0 <= v <= 1.0 for v in self.fog_color):
            raise DomainSpecError(f"fog_color must be an RGB triple in [0, 1], got {self.fog_color}")
        if len(self.color_shift) != 3:
            raise DomainSpecError("color_shift must be an RGB triple")
        if not self.contrast > 0:
            raise DomainSpecError(f"contrast must be > 0, got {self.contrast}")
        if self.blur_sigma < 0:
            raise DomainSpecError("blur_sigma must be >= 0")
        if not 0.0 <= self.fog_jitter <= 1.0:
            raise DomainSpecError(f"fog_jitter must lie in [0, 1], got {self.fog_jitter}")

    @property
    def is_identity(self) -> bool:
        return (
            self.fog_intensity == 0.0
            and self.fog_jitter == 0.0
            and self.contrast == 1.0
            and self.color_shift == (0.0, 0.0, 0.0)
        )


@dataclass(frozen=True)
class DomainSpec:
    n_classes: int = 4
    image_size: int = 32
    samples_per_class: int = 100
    style: StyleSpec = field(default_factory=StyleSpec)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.style, dict):
            object.__setattr__(self, "style", StyleSpec(**self.style))
        if not 2 <= self.n_classes <= len(SHAPES):
            raise DomainSpecError(f"n_classes must be in [2, {len(SHAPES)}], got {self.n_classes}")
        if self.image_size < 8:
            raise DomainSpecError("image_size must be at least 8")
        if self.samples_per_class < 1:
            raise DomainSpecError("samples_per_class must be >= 1")

    def with_style(self, **changes) -> "DomainSpec":
        return replace(self, style=replace(self.style, **changes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["style"]["fog_color"] = list(d["style"]["fog_color"])
        d["style"]["color_shift"] = list(d["style"]["color_shift"])
        return d


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float32
    labels: np.ndarray | None  # (N,) int64, or None when unlabeled
    ids: list[str]

    def __len__(self) -> int:
        return len(self.images)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.images[idx],
            None if self.labels is None else self.labels[idx],
            [self.ids[i] for i in idx],
        )


def _quantize(img: np.ndarray) -> np.ndarray:
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.random((3, 5, 5))
    # bilinear upsample of a 5x5 grid
    pos = np.linspace(0, 4, size)
    i0 = np.clip(np.floor(pos).astype(int), 0, 3)
    f = pos - i0
    rows = coarse[:, i0, :] * (1 - f)[None, :, None] + coarse[:, i0 + 1, :] * f[None, :, None]
    return rows[:, :, i0] * (1 - f)[None, None, :] + rows[:, :, i0 + 1] * f[None, None, :]


def _shape_mask(kind: str, size: int, cx: float, cy: float, r: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(theta), np.sin(theta)
    u, v = c * dx + s * dy, -s * dx + c * dy
    if kind == "disk":
        return dx**2 + dy**2 <= r**2
    if kind == "square":
        return (np.abs(u) <= 0.8 * r) & (np.abs(v) <= 0.8 * r)
    if kind == "triangle":
        # upward triangle in rotated frame
        return (v <= 0.6 * r) & (v >= -r + 2.0 * np.abs(u) * 0.9)
    if kind == "cross":
        arm = 0.3 * r
        return ((np.abs(u) <= arm) & (np.abs(v) <= r)) | ((np.abs(v) <= arm) & (np.abs(u) <= r))
    if kind == "ring":
        d2 = dx**2 + dy**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if kind == "diamond":
        return np.abs(u) + np.abs(v) <= r
    raise DomainSpecError(f"unknown shape {kind!r}")


def render_content(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One clean image of shape class ``label``."""
    # a narrow background palette keeps one image representative of its domain
    base = rng.uniform(0.35, 0.65, size=3)
    bg = base[:, None, None] + 0.25 * (_texture(rng, size) - 0.5)
    r = rng.uniform(0.25, 0.4) * size
    cx, cy = rng.uniform(r, size - r, size=2)
    # small rotations keep the classes separable for a shallow net
    theta = rng.uniform(-0.26, 0.26)
    color = rng.uniform(0.0, 1.0, size=3)
    # keep the shape visible against its background
    while np.abs(color - base).sum() < 0.6:
        color = rng.uniform(0.0, 1.0, size=3)
    mask = _shape_mask(SHAPES[label], size, cx, cy, r, theta)
    img = np.where(mask[None], color[:, None, None], bg)
    return np.clip(img, 0.0, 1.0)


def apply_fog(image, t: float, fog_color=DEFAULT_FOG_COLOR, blur_sigma: float = 0.7) -> np.ndarray:
    """Blend ``image`` (C, H, W) towards ``fog_color`` by ``t``, blur, clip."""
    if not 0.0 <= t <= 1.0:
        raise DomainSpecError(f"fog intensity must lie in [0, 1], got {t}")
    image = np.asarray(image, dtype=np.float64)
    fog = np.asarray(fog_color, dtype=np.float64).reshape(-1, 1, 1)
    out = (1.0 - t) * image + t * fog
    if blur_sigma > 0:
        out = gaussian_filter(out, sigma=(0, blur_sigma, blur_sigma), mode="nearest")
    return np.clip(out, 0.0, 1.0)


def apply_style(image: np.ndarray, style: StyleSpec, fog_intensity: float | None = None) -> np.ndarray:
    """Contrast/shift about mid-gray, then fog. The identity style is a no-op.

    ``fog_intensity`` overrides ``style.fog_intensity`` (used for per-image jitter).
    """
    t = style.fog_intensity if fog_intensity is None else fog_intensity
    if style.is_identity:
        return image
    shift = np.asarray(style.color_shift).reshape(3, 1, 1)
    out = np.clip((image - 0.5) * style.contrast + 0.5 + shift, 0.0, 1.0)
    if t > 0:
        out = apply_fog(out, t, style.fog_color, style.blur_sigma)
    return out


def fog_levels(spec: DomainSpec) -> np.ndarray:
    """Per-image fog intensities. Drawn from their own stream so the jitter
    never disturbs content."""
    n = spec.n_classes * spec.samples_per_class
    st = spec.style
    if st.fog_jitter == 0:
        return np.full(n, st.fog_intensity)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 2])))
    return np.clip(st.fog_intensity + rng.uniform(-st.fog_jitter, st.fog_jitter, size=n), 0.0, 1.0)


def content_labels(spec: DomainSpec) -> np.ndarray:
    labels = np.repeat(np.arange(spec.n_classes), spec.samples_per_class)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 0])))
    return rng.permutation(labels)


def generate_dataset(spec: DomainSpec) -> Dataset:
    """Deterministic labeled image set; content depends only on the seed,
    class count, size and count."""
    labels = content_labels(spec)
    n = len(labels)
    images = np.empty((n, 3, spec.image_size, spec.image_size), dtype=np.float32)
    fog = fog_levels(spec)
    root = np.random.SeedSequence([spec.seed, 1])
    for i, (label, child) in enumerate(zip(labels, root.spawn(n))):
        img = render_content(int(label), spec.image_size, np.random.Generator(np.random.PCG64(child)))
        images[i] = _quantize(apply_style(img, spec.style, fog[i]))
    ids = [f"{spec.seed}:{i:05d}" for i in range(n)]
    return Dataset(images, labels.astype(np.int64), ids)


def save_dataset(ds: Dataset, directory, spec: DomainSpec | None = None) -> Path:
    """Write ``images/NNNNN.png`` plus ``manifest.json``."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, img in enumerate(ds.images):
        rel = f"images/{i:05d}.png"
        arr = np.round(np.transpose(img, (1, 2, 0)) * 255.0).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
        atomic_write_bytes(directory / rel, buf.getvalue())
        label = None if ds.labels is None else int(ds.labels[i])
        entries.append({"file": rel, "label": label, "id": ds.ids[i]})
    manifest = {"schema_version": MANIFEST_VERSION, "images": entries}
    if spec is not None:
        manifest["spec"] = spec.to_dict()
    atomic_write_json(directory / MANIFEST_NAME, manifest)
    return directory


def load_image(path, size: int | None = None) -> np.ndarray:
    """Read an image file as a (3, H, W) float32 array in [0, 1]."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DomainSpecError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_dataset(directory, size: int | None = None) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainSpecError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if manifest.get("schema_version") != MANIFEST_VERSION:
        raise DomainSpecError(f"unsupported manifest schema {manifest.get('schema_version')!r}")
    entries = manifest["images"]
    if not entries:
        raise DomainSpecError(f"manifest {manifest_path} lists no images")
    images = np.stack([load_image(directory / e["file"], size) for e in entries])
    raw = [e.get("label") for e in entries]
    labels = None if any(v is None for v in raw) else np.asarray(raw, dtype=np.int64)
    ids = [str(e.get("id", e["file"])) for e in entries]
    return Dataset(images, labels, ids)
