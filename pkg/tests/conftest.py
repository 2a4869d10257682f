import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ttpnb.dataset import Table, load_csv

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).resolve().parent / "fixtures"
DATA = ROOT / "data"


@pytest.fixture(scope="session")
def synthetic_path() -> Path:
    return FIXTURES / "synthetic.csv"


@pytest.fixture(scope="session")
def synthetic(synthetic_path) -> Table:
    return load_csv(synthetic_path, "label")


def make_table(values, labels, names=None, name="t") -> Table:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    names = names or [f"x{i}" for i in range(values.shape[1])]
    return Table(name, tuple(names), np.arange(len(labels), dtype=np.int64), values, tuple(labels))


def _dataset(name: str) -> Path:
    path = DATA / f"{name}.csv"
    if not path.exists():
        # Best effort: the fetch script pulls the data from PyPI wheels.
        subprocess.run([sys.executable, str(ROOT / "scripts" / "fetch_datasets.py")], check=False)
    if not path.exists():
        pytest.skip(f"{path} missing; run scripts/fetch_datasets.py")
    return path


@pytest.fixture(scope="session")
def pima_path() -> Path:
    return _dataset("pima")


@pytest.fixture(scope="session")
def heart_path() -> Path:
    return _dataset("heart")


def build_session(table, num_sites=3, scheme="null", noise_mode=None, mode="stats",
                  plan=None, split_index=0, noise_seed=7, session_id="s"):
    """Coordinator and party states for one session over ``table``."""
    from ttpnb.dataset import SplitPlan, partition_vertical
    from ttpnb.perturb import Absolute
    from ttpnb.protocol import CoordinatorConfig, new_coordinator, new_party

    fragments = partition_vertical(table, num_sites)
    config = CoordinatorConfig(
        session_id=session_id,
        min_sites=num_sites,
        split_plan=plan or SplitPlan(seed=42, repeats=1),
        split_index=split_index,
        noise_mode=noise_mode or Absolute(0.0),
        noise_seed=noise_seed,
        mode=mode,
    )
    coordinator = new_coordinator(config, scheme)
    parties = [new_party(f.site_id, f, scheme) for f in fragments]
    return coordinator, parties


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
