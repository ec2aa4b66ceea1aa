"""Command-line entry point.

Exit codes: 0 on success, 1 when inputs fail validation, 2 when a run
fails at runtime. Relative output paths are placed under
``$OSSA_OUTPUT_ROOT`` when that variable is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backbone import INSERTION_POINTS, ArchConfig, Backbone, build_backbone
from .io_utils import OUTPUT_ROOT_ENV, resolve_output

log = logging.getLogger("ossa")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class CliError(ValueError):
    """Bad command-line usage; reported with exit code 1."""


def _layers(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [n for n in names if n not in INSERTION_POINTS]
    if not names or bad:
        raise CliError(f"--layers must be a comma list drawn from {INSERTION_POINTS}, got {text!r}")
    return names


def _load_backbone(args) -> Backbone:
    if args.backbone:
        return Backbone.load(args.backbone)
    arch = ArchConfig()
    if args.config:
        from .config import load_config

        arch = load_config(args.config).arch
    return build_backbone(arch, args.backbone_seed)


def _load_train_config(args):
    from .config import load_config, with_seed

    return with_seed(load_config(args.config), args.seed)


def _attach_log_file(path: Path) -> logging.Handler:
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("ossa").addHandler(handler)
    return handler


# --- subcommands ---------------------------------------------------------------


def cmd_extract(args) -> int:
    from .domains import load_dataset
    from .prototype import extract_prototype, save_prototype

    layers = _layers(args.layers)
    net = _load_backbone(args)
    images: list = []
    for p in args.images:
        p = Path(p)
        if p.is_dir():
            ds = load_dataset(p, net.arch.image_size)
            images.extend(ds.images)
        else:
            images.append(p)
    proto = extract_prototype(net, images, layers, args.eps, seed=args.seed)
    out = save_prototype(proto, resolve_output(args.out))
    print(f"wrote {out} ({proto.image_count} image(s), layers {', '.join(layers)})")
    return EXIT_OK


def cmd_gap_report(args) -> int:
    from .gap import write_gap_report
    from .prototype import load_prototype

    a, b = load_prototype(args.proto_a), load_prototype(args.proto_b)
    metrics = write_gap_report(a, b, resolve_output(args.out), labels=(args.label_a, args.label_b))
    print(f"{'layer':<12} {'mean|dmu|':>12} {'mean|dsigma|':>14}")
    for name, m in metrics.items():
        print(f"{name:<12} {m['mean_abs_dmu']:>12.6f} {m['mean_abs_dsigma']:>14.6f}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .harness import train

    cfg = _load_train_config(args)
    out = resolve_output(args.out or cfg.output_dir or f"runs/seed{cfg.seed}")
    handler = _attach_log_file(out / "train.log")
    try:
        log.info("training with config %s", json.dumps(cfg.to_dict(), sort_keys=True))
        net, report = train(cfg)
        net.save(out / "backbone.npz")
        report.save(out / "report.json")
    finally:
        logging.getLogger("ossa").removeHandler(handler)
        handler.close()
    print(f"source {report.source_accuracy:.4f}  target {report.target_accuracy:.4f}  -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import RunReport, evaluate, load_split, weights_digest

    cfg = _load_train_config(args)
    out = resolve_output(args.out or cfg.output_dir or f"runs/seed{cfg.seed}")
    weights = Path(args.weights) if args.weights else out / "backbone.npz"
    if not weights.exists():
        raise CliError(f"no weights at {weights}; run `train` first or pass --weights")
    net = Backbone.load(weights)
    if net.arch != cfg.arch:
        raise CliError("weights were trained with a different arch than the config describes")
    src = evaluate(net, load_split(cfg, "source", "test"))
    tgt = evaluate(net, load_split(cfg, "target", "test"))
    report = RunReport(
        config=cfg.to_dict(),
        seed=cfg.seed,
        train_loss=[],
        source_accuracy=src["accuracy"],
        target_accuracy=tgt["accuracy"],
        source_per_class=src["per_class_accuracy"],
        target_per_class=tgt["per_class_accuracy"],
        backbone_fingerprint=net.fingerprint(),
        weights_sha256=weights_digest(net),
    )
    report.save(out / "eval.json")
    print(f"source {report.source_accuracy:.4f}  target {report.target_accuracy:.4f}  -> {out / 'eval.json'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import load_grid, run_grid

    grid = load_grid(args.grid)
    out = resolve_output(args.out_dir)
    res = run_grid(grid, out, jobs=args.jobs)
    failed = sum(r["status"] != "ok" for r in res["rows"])
    for r in res["aggregate"]:
        axes = "  ".join(f"{a}={r[a]}" for a in grid.axes)
        print(f"{r['cell']}  {axes}  target {r['target_mean']} ± {r['target_std']}  source {r['source_mean']}")
    print(f"{len(res['rows'])} runs ({failed} failed); best cell {res['summary']['best_cell']} -> {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .domains import DomainSpec, StyleSpec, generate_dataset, save_dataset

    spec = DomainSpec(
        n_classes=args.n_classes,
        image_size=args.image_size,
        samples_per_class=args.samples_per_class,
        style=StyleSpec(fog_intensity=args.fog),
        seed=args.seed,
    )
    out = save_dataset(generate_dataset(spec), resolve_output(args.out), spec)
    print(f"wrote {spec.n_classes * spec.samples_per_class} images -> {out}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ossa",
        description=f"Style-prototype augmentation toolkit. Relative outputs go under ${OUTPUT_ROOT_ENV} if set.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("extract", help="compute a style prototype from images")
    e.add_argument("--images", nargs="+", required=True, help="image files or dataset directories")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--backbone", help="saved backbone (.npz)")
    g.add_argument("--backbone-seed", type=int, default=0, help="build a fresh backbone with this seed")
    e.add_argument("--config", help="take the arch from this train config (with --backbone-seed)")
    e.add_argument("--layers", default=",".join(INSERTION_POINTS))
    e.add_argument("--eps", type=float, default=1e-5)
    e.add_argument("--seed", type=int, default=0, help="recorded in the prototype file")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_extract)

    r = sub.add_parser("gap-report", help="compare two prototypes")
    r.add_argument("proto_a")
    r.add_argument("proto_b")
    r.add_argument("--label-a", default="A")
    r.add_argument("--label-b", default="B")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_gap_report)

    for name, func, helptext in (("train", cmd_train, "train a model"), ("eval", cmd_eval, "evaluate saved weights")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("config")
        t.add_argument("--seed", type=int)
        t.add_argument("--out")
        if name == "eval":
            t.add_argument("--weights")
        t.set_defaults(func=func)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("grid")
    a.add_argument("--out-dir", required=True)
    a.add_argument("--jobs", type=int, default=1, help="parallel cells (default: sequential)")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("generate", help="write a synthetic domain to disk")
    d.add_argument("--out", required=True)
    d.add_argument("--fog", type=float, default=0.0)
    d.add_argument("--n-classes", type=int, default=4)
    d.add_argument("--image-size", type=int, default=32)
    d.add_argument("--samples-per-class", type=int, default=10)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are validation errors
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger("ossa").setLevel(logging.INFO)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
