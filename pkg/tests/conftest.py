"""テスト共通のフィクスチャ。"""

import numpy as np
import pytest

from services.experiment_service import ExperimentConfig
from services.scenario_service import Dataset
from services.synthetic_service import synth_generate


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """リポジトリの settings.json や環境変数に依存しないようにする。"""
    monkeypatch.setenv("SCENREP_SETTINGS_PATH", str(tmp_path / "settings.json"))
    monkeypatch.delenv("SCENREP_THREADS", raising=False)
    monkeypatch.delenv("SCENREP_LOG_LEVEL", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def lvd_small() -> Dataset:
    return synth_generate("lvd", 60, seed=3, n_t=10)


@pytest.fixture(scope="session")
def cutin_small() -> Dataset:
    return synth_generate("cut_in", 40, seed=4, n_t=10)


@pytest.fixture
def small_config() -> ExperimentConfig:
    return ExperimentConfig(
        n_t=10,
        d=2,
        d_range=(1, 2, 3),
        n_w=30,
        repeats=3,
        seed=11,
        beta_grid=(0.0, 0.25, 0.5),
        n_large=120,
        bootstrap_b=100,
        threads=1,
        max_iterations=3,
    )
