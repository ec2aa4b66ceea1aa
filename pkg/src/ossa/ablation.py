"""Ablation grids: cross-product of config overrides, several seeds per cell.

Grid file (YAML or JSON)::

    base_config: base.yaml        # path (relative to the grid file) or inline mapping
    seeds: [0, 1, 2]
    budget: 200                   # max cells x seeds
    axes:
      noise_std: [0.0, 0.75]
      layers: [[post_stem], [post_stem, post_stage1]]
      prob: [0.5]
      prototype_source: [target, source]
      ossa.enabled: [false, true] # any dotted config path works as an axis

Per-run reports land in ``<out>/runs``; ``results.csv`` has one row per run,
``aggregate.csv`` one row per cell (mean and population std over seeds),
and ``summary.json`` marks the best cell per axis by mean target accuracy.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import ConfigError, TrainConfig, load_yaml, parse_config
from .io_utils import atomic_write_json, atomic_write_text

log = logging.getLogger(__name__)

AXIS_ALIASES = {
    "layers": "ossa.layers",
    "noise_std": "ossa.noise_std",
    "prob": "ossa.prob",
    "enabled": "ossa.enabled",
    "mode": "ossa.mode",
    "prototype_source": "prototype.source",
    "prototype_count": "prototype.count",
}
DEFAULT_BUDGET = 200


@dataclass
class AblationGrid:
    axes: dict[str, list]
    seeds: list[int]
    base: dict = field(default_factory=dict)
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("grid needs at least one seed")
        if not self.axes:
            raise ConfigError("grid needs at least one axis")
        for name, values in self.axes.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"axis {name!r} must be a non-empty list")
        n = self.n_cells * len(self.seeds)
        if n > self.budget:
            raise ConfigError(f"grid has {n} runs, over the budget of {self.budget}")
        for cell_id, overrides in self.cells():
            try:
                self.cell_config(overrides)
            except ConfigError as exc:
                raise ConfigError(f"cell {cell_id}: {exc}") from exc

    @property
    def n_cells(self) -> int:
        return int(np.prod([len(v) for v in self.axes.values()]))

    def cells(self) -> list[tuple[str, dict[str, Any]]]:
        names = list(self.axes)
        out = []
        for i, combo in enumerate(itertools.product(*(self.axes[n] for n in names))):
            out.append((f"cell{i:03d}", dict(zip(names, combo))))
        return out

    def cell_config(self, overrides: dict[str, Any], seed: int | None = None) -> TrainConfig:
        cfg = parse_config(self.base)
        dotted = {AXIS_ALIASES.get(k, k): v for k, v in overrides.items()}
        if seed is not None:
            dotted["seed"] = seed
        return cfg.with_overrides(dotted)


def load_grid(path) -> AblationGrid:
    path = Path(path)
    raw = load_yaml(path)
    if not isinstance(raw, dict):
        raise ConfigError("grid file must be a mapping")
    unknown = set(raw) - {"axes", "seeds", "base_config", "budget"}
    if unknown:
        raise ConfigError(f"unknown grid fields: {sorted(unknown)}")
    base = raw.get("base_config") or {}
    if isinstance(base, str):
        base = load_yaml(path.parent / base) or {}
    return AblationGrid(
        axes=dict(raw.get("axes") or {}),
        seeds=[int(s) for s in raw.get("seeds") or []],
        base=base,
        budget=int(raw.get("budget", DEFAULT_BUDGET)),
    )


def aggregate(values) -> tuple[float, float]:
    """Mean and population standard deviation (divide by n)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=0))


def _run_one(cfg_dict: dict) -> dict:
    from .harness import train

    _, report = train(parse_config(cfg_dict))
    return report.to_dict()


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return "+".join(str(x) for x in v)
    return str(v)


def run_grid(grid: AblationGrid, out_dir, jobs: int = 1) -> dict:
    """Run every cell x seed; a failing run is recorded and skipped."""
    out_dir = Path(out_dir)
    runs_dir = out_dir / "runs"
    tasks = []
    for cell_id, overrides in grid.cells():
        for seed in grid.seeds:
            cfg = grid.cell_config(overrides, seed)
            tasks.append((cell_id, overrides, seed, cfg.to_dict()))

    results: list[dict | Exception] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, t[3]) for t in tasks]
            for f in futures:
                try:
                    results.append(f.result())
                except Exception as exc:  # recorded, never aborts the grid
                    results.append(exc)
    else:
        for t in tasks:
            try:
                results.append(_run_one(t[3]))
            except Exception as exc:
                results.append(exc)

    axis_names = list(grid.axes)
    rows = []
    for (cell_id, overrides, seed, _), res in zip(tasks, results):
        row = {"cell": cell_id, "seed": seed, **{a: _fmt(overrides[a]) for a in axis_names}}
        if isinstance(res, Exception):
            log.warning("%s seed %d failed: %s", cell_id, seed, res)
            row.update(status="failed", source_accuracy="", target_accuracy="", error=f"{type(res).__name__}: {res}")
        else:
            atomic_write_json(runs_dir / f"{cell_id}_seed{seed}.json", _without_wallclock(res))
            row.update(
                status="ok",
                source_accuracy=f"{res['source_accuracy']:.6f}",
                target_accuracy=f"{res['target_accuracy']:.6f}",
                error="",
            )
        rows.append(row)

    agg_rows = aggregate_rows(rows, axis_names)
    summary = summarize(agg_rows, axis_names)
    _write_csv(out_dir / "results.csv", rows, ["cell", "seed", *axis_names, "status", "source_accuracy", "target_accuracy", "error"])
    _write_csv(
        out_dir / "aggregate.csv",
        agg_rows,
        ["cell", *axis_names, "n_ok", "n_failed", "source_mean", "source_std", "target_mean", "target_std"],
    )
    atomic_write_json(out_dir / "summary.json", summary)
    return {"rows": rows, "aggregate": agg_rows, "summary": summary}


def _without_wallclock(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "wall_seconds"}


def aggregate_rows(rows: list[dict], axis_names: list[str]) -> list[dict]:
    cells: dict[str, list[dict]] = {}
    for r in rows:
        cells.setdefault(r["cell"], []).append(r)
    out = []
    for cell_id, rs in cells.items():
        ok = [r for r in rs if r["status"] == "ok"]
        s_mean, s_std = aggregate(float(r["source_accuracy"]) for r in ok)
        t_mean, t_std = aggregate(float(r["target_accuracy"]) for r in ok)
        out.append(
            {
                "cell": cell_id,
                **{a: rs[0][a] for a in axis_names},
                "n_ok": len(ok),
                "n_failed": len(rs) - len(ok),
                "source_mean": f"{s_mean:.6f}",
                "source_std": f"{s_std:.6f}",
                "target_mean": f"{t_mean:.6f}",
                "target_std": f"{t_std:.6f}",
            }
        )
    return out


def summarize(agg_rows: list[dict], axis_names: list[str]) -> dict:
    ok = [r for r in agg_rows if r["n_ok"] > 0]
    summary: dict[str, Any] = {"metric": "target_mean", "std_convention": "population (ddof=0)", "axes": {}}
    if not ok:
        summary["best_cell"] = None
        return summary
    best = max(ok, key=lambda r: float(r["target_mean"]))
    summary["best_cell"] = best["cell"]
    for a in axis_names:
        by_value: dict[str, list[float]] = {}
        for r in ok:
            by_value.setdefault(r[a], []).append(float(r["target_mean"]))
        marginal = {v: float(np.mean(xs)) for v, xs in by_value.items()}
        best_value = max(marginal, key=marginal.get)
        cell = max((r for r in ok if r[a] == best_value), key=lambda r: float(r["target_mean"]))
        summary["axes"][a] = {"marginal_target_mean": marginal, "best_value": best_value, "best_cell": cell["cell"]}
    return summary


def _write_csv(path, rows: list[dict], columns: list[str]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in columns})
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def reports_in(out_dir) -> list[dict]:
    return [json.loads(p.read_text()) for p in sorted((Path(out_dir) / "runs").glob("*.json"))]
