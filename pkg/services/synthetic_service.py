"""
合成シナリオ生成サービス
実データの代わりに、既知の分布から LVD・カットインシナリオを生成する。
真の分布から直接サンプルできるので、大規模テスト集合（Z_large）の作成にも使う。

LVD の潜在因子（固有次元 ≈ 5）:
  継続時間 T、先行車初速 v0、減速の3高調波の振幅 A1..A3。
  初期車間時間は v0 の関数に小さなノイズを乗せたもの、加速度には相関ノイズを加える。
カットインの潜在因子（固有次元 ≈ 5）:
  継続時間 T、初期横位置 y0（左右で符号が変わる二峰分布）、割込み車の平均速度、
  速度の変動振幅、横位置の高調波振幅。自車初速と初期縦位置は平均速度に従属する。
"""

import logging
import math

import numpy as np

from services.scenario_service import (
    CUT_IN_SCHEMA,
    LVD_SCHEMA,
    Dataset,
    Scenario,
    ScenarioCategory,
    assemble_dataset,
)

_logger = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 10.0
INTRINSIC_DIMENSION = {ScenarioCategory.LVD: 5, ScenarioCategory.CUT_IN: 5}


def _sample_times(duration: float) -> np.ndarray:
    count = max(4, int(round(duration * SAMPLE_RATE_HZ)) + 1)
    return np.linspace(0.0, duration, count)


def _correlated_noise(rng: np.random.Generator, count: int, sd: float, phi: float = 0.9) -> np.ndarray:
    """定常 AR(1) ノイズ（周辺標準偏差 sd）。"""
    eps = rng.standard_normal(count) * sd * math.sqrt(1.0 - phi * phi)
    out = np.empty(count)
    out[0] = rng.standard_normal() * sd
    for k in range(1, count):
        out[k] = phi * out[k - 1] + eps[k]
    return out


def _lvd_scenario(rng: np.random.Generator, index: int) -> Scenario:
    duration = float(np.exp(rng.normal(math.log(4.7), 0.25)))
    if rng.random() < 0.5:
        speed = rng.normal(5.5, 1.2)
    else:
        speed = rng.normal(12.0, 2.5)
    speed = float(max(speed, 1.0))
    gap = float(1.5 * (speed / 8.5) ** -0.4 * np.exp(rng.normal(0.0, 0.05)))

    a1 = float(np.exp(rng.normal(math.log(1.2), 0.35)) * math.sqrt(speed / 8.5))
    a2 = float(rng.normal(0.0, 0.5))
    a3 = float(rng.normal(0.0, 0.3))

    ts = _sample_times(duration)
    tau = ts / duration
    accel = (
        -a1 * np.sin(math.pi * tau)
        + a2 * np.sin(2.0 * math.pi * tau)
        + a3 * np.sin(3.0 * math.pi * tau)
        + _correlated_noise(rng, ts.size, 0.03)
    )
    return Scenario(
        id=f"lvd-{index:05d}",
        t0=0.0,
        t1=duration,
        signals={"lead_acceleration": np.column_stack([ts, accel])},
        statics={
            "duration": duration,
            "initial_lead_speed": speed,
            "initial_time_gap": gap,
        },
        category=ScenarioCategory.LVD,
        units=LVD_SCHEMA.units,
    )


def _cutin_scenario(rng: np.random.Generator, index: int) -> Scenario:
    duration = float(np.exp(rng.normal(math.log(5.0), 0.25)))
    side = 1.0 if rng.random() < 0.5 else -1.0
    y0 = float(side * rng.uniform(2.5, 3.7))
    if rng.random() < 0.5:
        mean_speed = rng.normal(20.0, 3.0)
    else:
        mean_speed = rng.normal(27.0, 3.0)
    mean_speed = float(max(mean_speed, 3.0))
    speed_swing = float(rng.normal(0.0, 1.0))
    lateral_bump = float(rng.normal(0.0, 0.3))

    ego_speed = float(mean_speed - 1.5 + rng.normal(0.0, 0.3))
    longitudinal = float(0.8 * mean_speed * np.exp(rng.normal(0.0, 0.05)))

    ts = _sample_times(duration)
    tau = ts / duration
    speed = mean_speed + speed_swing * (tau - 0.5) + _correlated_noise(rng, ts.size, 0.05)
    lateral = (
        y0 * (1.0 + np.cos(math.pi * tau)) / 2.0
        + side * lateral_bump * np.sin(2.0 * math.pi * tau)
        + _correlated_noise(rng, ts.size, 0.02)
    )
    return Scenario(
        id=f"cutin-{index:05d}",
        t0=0.0,
        t1=duration,
        signals={
            "cutin_speed": np.column_stack([ts, speed]),
            "lateral_position": np.column_stack([ts, lateral]),
        },
        statics={
            "duration": duration,
            "ego_initial_speed": ego_speed,
            "initial_longitudinal_position": longitudinal,
        },
        category=ScenarioCategory.CUT_IN,
        units=CUT_IN_SCHEMA.units,
    )


_GENERATORS = {
    ScenarioCategory.LVD: _lvd_scenario,
    ScenarioCategory.CUT_IN: _cutin_scenario,
}


def synth_scenarios(category, n: int, seed) -> list[Scenario]:
    """
    真の分布から n 件の記録シナリオを生成する。

    Args:
        category: 'lvd' / 'cut_in' または ScenarioCategory
        n: 件数（1以上）
        seed: シード（int）または numpy Generator

    Returns:
        Scenario のリスト（同じシードなら同一）
    """
    category = ScenarioCategory(category)
    if category not in _GENERATORS:
        raise ValueError(f"合成生成に未対応のカテゴリ: {category.value}")
    if n < 1:
        raise ValueError(f"生成件数は1以上が必要です: {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    make = _GENERATORS[category]
    scenarios = [make(rng, i) for i in range(n)]
    _logger.info("合成シナリオを %d 件生成しました（%s）", n, category.value)
    return scenarios


def synth_generate(category, n: int, seed, n_t: int = 50, method: str = "cubic_spline") -> Dataset:
    """合成シナリオを生成してパラメータベクトルのデータセットにする。"""
    return assemble_dataset(synth_scenarios(category, n, seed), n_t, method)


class GroundTruthSampler:
    """真の分布からデータセットを直接抽出するサンプラー（Z_large などの作成用）。"""

    def __init__(self, category, n_t: int = 50, method: str = "cubic_spline"):
        self.category = ScenarioCategory(category)
        self.n_t = n_t
        self.method = method

    def draw(self, n: int, seed) -> Dataset:
        return synth_generate(self.category, n, seed, self.n_t, self.method)
