import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.sim.settings import SettingSpec, generate_study  # noqa: E402
from src.store.trial_data import Study, StudyRole  # noqa: E402


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow", action="store_true", default=False, help="run Monte Carlo acceptance tests"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte Carlo checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_ledger(tmp_path, monkeypatch):
    path = tmp_path / "historian" / "ledger.jsonl"
    monkeypatch.setenv("ETSI_LEDGER", str(path))
    return path


@pytest.fixture
def setting1_study() -> Study:
    """Small Setting-1 Study A, reproducible."""
    spec = SettingSpec(id=1)
    return generate_study(spec, 120, 130, np.random.default_rng(7))


@pytest.fixture
def tiny_study() -> Study:
    """Ten subjects per arm with a clear treatment effect on both S and Y."""
    rng = np.random.default_rng(11)
    n = 10
    w = np.concatenate([np.linspace(0.0, 9.0, n), np.linspace(0.5, 9.5, n)])
    s = np.concatenate([rng.normal(3.0, 1.0, n), rng.normal(2.0, 1.0, n)])
    y = 1.5 * s + 0.1 * w + rng.normal(0.0, 0.5, 2 * n)
    arm = np.concatenate([np.ones(n, dtype=int), np.zeros(n, dtype=int)])
    return Study(role=StudyRole.A, arm=arm, w=w, s=s, y=y)
