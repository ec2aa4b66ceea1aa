"""Training and evaluation of the toy backbone with optional OSSA injection."""

from __future__ import annotations

import functools
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backbone import BLOCKS, INSERTION_POINTS, Backbone, build_backbone
from .config import OssaConfig, TrainConfig
from .domains import Dataset, DomainSpec, StyleSpec, generate_dataset, load_dataset
from .io_utils import atomic_write_json
from .layers import softmax_cross_entropy
from .prototype import StylePrototype, extract_prototype, load_prototype
from .stats import ChannelStats, channel_stats
from .transform import NoiseSpec, make_rng, ossa, style_backward

log = logging.getLogger(__name__)

REPORT_VERSION = 1


class TrainingError(RuntimeError):
    pass


def _style_hook(target: ChannelStats | None, rng, noise: NoiseSpec, eps: float, record: list | None):
    """Hook applying OSSA towards ``target``; ``None`` means the batch's own
    statistics (plain noise perturbation)."""

    def hook(h):
        tgt = channel_stats(h, eps) if target is None else target
        out, alpha, _beta = ossa(h, tgt, rng, noise, eps, return_noise=True)
        b, c = h.shape[:2]
        scale = alpha * np.broadcast_to(tgt.sigma, (b, c))
        if record is not None:
            record.append((alpha, _beta))

        def backward(grad):
            return style_backward(grad, h, scale, eps).astype(h.dtype, copy=False)

        return out.astype(h.dtype, copy=False), backward

    return hook


def forward_with_ossa(
    backbone: Backbone,
    batch,
    proto: StylePrototype | None,
    cfg: OssaConfig,
    rng: np.random.Generator,
    *,
    need_cache: bool = False,
    record: list | None = None,
):
    """One training-mode forward pass.

    A single Bernoulli(cfg.prob) coin decides for the whole batch whether
    every configured layer is re-styled. Returns ``(logits, applied)`` or
    ``(logits, cache, applied)`` with ``need_cache``.
    """
    hooks = {}
    applied = False
    if cfg.enabled:
        if cfg.mode == "ossa":
            if proto is None:
                raise TrainingError("OSSA mode needs a style prototype")
            proto.check_compatible(backbone, cfg.layers)
        applied = bool(rng.random() < cfg.prob)
        if applied:
            noise = NoiseSpec(std=cfg.noise_std)
            for name in cfg.layers:
                target = proto.layers[name] if cfg.mode == "ossa" else None
                hooks[name] = _style_hook(target, rng, noise, cfg.eps, record)
    if need_cache:
        logits, cache = backbone.forward(batch, hooks=hooks, need_cache=True)
        return logits, cache, applied
    return backbone.forward(batch, hooks=hooks), applied


def predict(backbone: Backbone, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    out = [
        backbone.forward(images[i : i + batch_size]).argmax(axis=1)
        for i in range(0, len(images), batch_size)
    ]
    return np.concatenate(out)


def evaluate(backbone: Backbone, dataset: Dataset, batch_size: int = 256) -> dict:
    """Top-1 and per-class accuracy. Never applies any style transform."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if dataset.labels is None:
        raise ValueError("evaluation needs a labeled dataset")
    pred = predict(backbone, dataset.images, batch_size)
    correct = pred == dataset.labels
    per_class = {}
    for k in range(backbone.arch.n_classes):
        m = dataset.labels == k
        if m.any():
            per_class[str(k)] = float(correct[m].mean())
    return {"accuracy": float(correct.mean()), "per_class_accuracy": per_class, "n": int(len(dataset))}


@dataclass
class RunReport:
    config: dict
    seed: int
    train_loss: list[float]
    source_accuracy: float
    target_accuracy: float
    source_per_class: dict = field(default_factory=dict)
    target_per_class: dict = field(default_factory=dict)
    ossa_applied_fraction: float = 0.0
    steps: int = 0
    backbone_fingerprint: str = ""
    weights_sha256: str = ""
    prototype_image_ids: list[str] = field(default_factory=list)
    wall_seconds: float = 0.0
    report_version: int = REPORT_VERSION

    def __post_init__(self):
        for name in ("source_accuracy", "target_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> Path:
        return atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls(**json.loads(Path(path).read_text()))


def weights_digest(backbone: Backbone) -> str:
    h = hashlib.sha256()
    for k in sorted(backbone.params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(backbone.params[k]).tobytes())
    return h.hexdigest()


# --- data --------------------------------------------------------------------


@functools.lru_cache(maxsize=16)
def _generated(spec: DomainSpec) -> Dataset:
    return generate_dataset(spec)


def _split_spec(cfg: TrainConfig, split: str, style: StyleSpec) -> DomainSpec:
    d = cfg.data
    per_class = d.train_per_class if split == "train" else d.test_per_class
    # train and test content come from distinct seed streams
    seed = d.seed * 2 + (0 if split == "train" else 1)
    return DomainSpec(d.n_classes, d.image_size, per_class, style, seed)


def load_split(cfg: TrainConfig, domain: str, split: str) -> Dataset:
    """``domain`` in {source, target}; ``split`` in {train, test}."""
    directory = getattr(cfg.data, f"{domain}_{split}_dir")
    if directory:
        return load_dataset(directory, cfg.data.image_size)
    style = cfg.data.source_style if domain == "source" else cfg.data.target_style
    return _generated(_split_spec(cfg, split, style))


def resolve_prototype(cfg: TrainConfig, backbone: Backbone) -> StylePrototype | None:
    """Load the configured prototype file, or extract one from randomly chosen
    images of the configured domain's training split."""
    if not (cfg.ossa.enabled and cfg.ossa.mode == "ossa"):
        return None
    pc = cfg.prototype
    if pc.path:
        proto = load_prototype(pc.path)
    else:
        pool = load_split(cfg, pc.source, "train")
        sel_seed = cfg.seed if pc.selection_seed is None else pc.selection_seed
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([sel_seed, 7])))
        idx = rng.choice(len(pool), size=min(pc.count, len(pool)), replace=False)
        chosen = pool.subset(np.sort(idx))
        proto = extract_prototype(backbone, chosen, cfg.ossa.layers, cfg.ossa.eps, seed=sel_seed)
    proto.check_compatible(backbone, cfg.ossa.layers)
    stale = [n for n in cfg.ossa.layers if BLOCKS[INSERTION_POINTS.index(n)] not in backbone.arch.frozen]
    if stale:
        # statistics after a trainable block drift as training proceeds
        log.warning("prototype layers %s follow trainable blocks; their statistics will go stale", stale)
    return proto


# --- training ----------------------------------------------------------------


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("data", "ossa")
    children = np.random.SeedSequence([seed, 42]).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[i : i + batch_size], i == 0


def train(
    cfg: TrainConfig,
    *,
    source_train: Dataset | None = None,
    source_test: Dataset | None = None,
    target_test: Dataset | None = None,
    proto: StylePrototype | None = None,
    backbone: Backbone | None = None,
    evaluate_after: bool = True,
) -> tuple[Backbone, RunReport]:
    """SGD with momentum on cross-entropy; deterministic given ``cfg.seed``."""
    t0 = time.perf_counter()
    src_train = source_train if source_train is not None else load_split(cfg, "source", "train")
    if src_train.labels is None:
        raise TrainingError("source training data must be labeled")
    net = backbone.copy() if backbone is not None else build_backbone(cfg.arch, cfg.model_seed)
    if proto is None:
        proto = resolve_prototype(cfg, net)
    elif cfg.ossa.enabled and cfg.ossa.mode == "ossa":
        proto.check_compatible(net, cfg.ossa.layers)

    rngs = _streams(cfg.seed)
    opt = cfg.optim
    velocity = {k: np.zeros_like(net.params[k]) for k in net.trainable}
    decay_at = set(opt.decay_steps)
    lr = opt.lr
    images = src_train.images.astype(net.dtype, copy=False)
    labels = src_train.labels

    epoch_losses: list[float] = []
    running: list[float] = []
    applied_count = 0
    batches = _batches(len(images), opt.batch_size, rngs["data"])
    for step in range(opt.steps):
        if step in decay_at:
            lr *= opt.decay_factor
        idx, new_epoch = next(batches)
        if new_epoch and running:
            epoch_losses.append(float(np.mean(running)))
            running = []
        logits, cache, applied = forward_with_ossa(
            net, images[idx], proto, cfg.ossa, rngs["ossa"], need_cache=True
        )
        applied_count += applied
        loss, dlogits = softmax_cross_entropy(logits, labels[idx])
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        running.append(loss)
        grads = net.backward(dlogits, cache)
        for k in net.trainable:
            v = velocity[k]
            v *= opt.momentum
            v += grads[k]
            net.params[k] -= (lr * v).astype(net.dtype, copy=False)
    if running:
        epoch_losses.append(float(np.mean(running)))

    src_eval = {"accuracy": 0.0, "per_class_accuracy": {}}
    tgt_eval = {"accuracy": 0.0, "per_class_accuracy": {}}
    if evaluate_after:
        src_eval = evaluate(net, source_test if source_test is not None else load_split(cfg, "source", "test"))
        tgt_eval = evaluate(net, target_test if target_test is not None else load_split(cfg, "target", "test"))

    report = RunReport(
        config=cfg.to_dict(),
        seed=cfg.seed,
        train_loss=epoch_losses,
        source_accuracy=src_eval["accuracy"],
        target_accuracy=tgt_eval["accuracy"],
        source_per_class=src_eval["per_class_accuracy"],
        target_per_class=tgt_eval["per_class_accuracy"],
        ossa_applied_fraction=applied_count / opt.steps,
        steps=opt.steps,
        backbone_fingerprint=net.fingerprint(),
        weights_sha256=weights_digest(net),
        prototype_image_ids=list(proto.image_ids) if proto is not None else [],
        wall_seconds=round(time.perf_counter() - t0, 3),
    )
    log.info(
        "seed=%d src=%.3f tgt=%.3f loss=%.4f (%.1fs)",
        cfg.seed, report.source_accuracy, report.target_accuracy,
        epoch_losses[-1] if epoch_losses else float("nan"), report.wall_seconds,
    )
    return net, report
