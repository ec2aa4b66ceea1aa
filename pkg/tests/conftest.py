import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def tiny_config_dict(**extra) -> dict:
    """A config that trains in well under a second."""
    d = {
        "seed": 0,
        "data": {"train_per_class": 8, "test_per_class": 4, "image_size": 16},
        "arch": {"image_size": 16, "widths": [4, 8, 8, 8]},
        "optim": {"steps": 12, "batch_size": 8, "decay_steps": [8]},
        "ossa": {"enabled": True, "prob": 0.5},
    }
    for key, value in extra.items():
        node = d
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return d


@pytest.fixture
def tiny_cfg():
    from ossa.config import parse_config

    return parse_config(tiny_config_dict())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
