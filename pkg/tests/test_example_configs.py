"""The example configs shipped in configs/ stay loadable."""

from pathlib import Path

from ossa.ablation import load_grid
from ossa.config import load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_run_configs_load():
    assert load_config(CONFIGS / "ossa.yaml").ossa.enabled
    assert not load_config(CONFIGS / "baseline.yaml").ossa.enabled


def test_grid_loads():
    grid = load_grid(CONFIGS / "grid.yaml")
    assert len(grid.cells()) == 4
