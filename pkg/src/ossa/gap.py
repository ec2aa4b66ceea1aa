"""Style-gap comparison between two prototypes.

The gap at a layer is the mean over channels of ``|mu_a - mu_b|`` (and the
same for sigma). The report also overlays histograms of the channel means
of both prototypes, one panel per layer.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .backbone import INSERTION_POINTS
from .io_utils import atomic_write_bytes, atomic_write_json, atomic_write_text
from .prototype import PrototypeMismatchError, StylePrototype


def gap_metrics(a: StylePrototype, b: StylePrototype) -> dict[str, dict[str, float]]:
    if a.layers.keys() != b.layers.keys():
        raise PrototypeMismatchError(
            f"prototypes cover different layers: {sorted(a.layers)} vs {sorted(b.layers)}"
        )
    out = {}
    for name in sorted(a.layers, key=INSERTION_POINTS.index):
        sa, sb = a.layers[name], b.layers[name]
        if sa.shape != sb.shape:
            raise PrototypeMismatchError(f"layer {name!r}: shapes {sa.shape} vs {sb.shape}")
        out[name] = {
            "mean_abs_dmu": float(np.mean(np.abs(sa.mu - sb.mu))),
            "mean_abs_dsigma": float(np.mean(np.abs(sa.sigma - sb.sigma))),
            "channels": int(sa.shape[1]),
        }
    return out


def _plot(a: StylePrototype, b: StylePrototype, labels: tuple[str, str]) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted(a.layers, key=INSERTION_POINTS.index)
    fig, axes = plt.subplots(1, len(names), figsize=(4.5 * len(names), 3.5), squeeze=False)
    for ax, name in zip(axes[0], names):
        mu_a, mu_b = a.layers[name].mu[0], b.layers[name].mu[0]
        bins = np.histogram_bin_edges(np.concatenate([mu_a, mu_b]), bins=min(20, max(5, mu_a.size)))
        ax.hist(mu_a, bins=bins, alpha=0.6, label=labels[0])
        ax.hist(mu_b, bins=bins, alpha=0.6, label=labels[1])
        ax.set_title(name)
        ax.set_xlabel("channel mean")
        ax.set_ylabel("channels")
        ax.legend(fontsize=8)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    return buf.getvalue()


def write_gap_report(
    a: StylePrototype, b: StylePrototype, out_dir, labels: tuple[str, str] = ("A", "B")
) -> dict:
    """Write ``gap.csv``, ``gap.json`` and ``gap_hist.png`` into ``out_dir``."""
    metrics = gap_metrics(a, b)
    out_dir = Path(out_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "channels", "mean_abs_dmu", "mean_abs_dsigma"])
    for name, m in metrics.items():
        w.writerow([name, m["channels"], f"{m['mean_abs_dmu']:.8g}", f"{m['mean_abs_dsigma']:.8g}"])
    atomic_write_text(out_dir / "gap.csv", buf.getvalue())
    hist = {
        name: {labels[0]: a.layers[name].mu[0].tolist(), labels[1]: b.layers[name].mu[0].tolist()}
        for name in metrics
    }
    atomic_write_json(out_dir / "gap.json", {"metrics": metrics, "channel_means": hist})
    atomic_write_bytes(out_dir / "gap_hist.png", _plot(a, b, labels))
    return metrics
