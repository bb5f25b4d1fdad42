"""テスト用のデータ組み立てヘルパー。"""

import numpy as np

from services.scenario_service import Dataset, ParameterLayout, WeightVector


def static_layout(n: int) -> ParameterLayout:
    """時系列なし・静的パラメータ n 個のレイアウト。"""
    return ParameterLayout(2, (), tuple(f"p{i}" for i in range(n)))


def make_dataset(values, prefix: str = "x") -> Dataset:
    """(N, n) 行列を静的パラメータだけのデータセットにする。"""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    layout = static_layout(values.shape[1])
    return Dataset(values, tuple(f"{prefix}-{i}" for i in range(values.shape[0])), layout)


def column_dataset(values, prefix: str = "x") -> Dataset:
    """1次元の点集合を1列のデータセットにする。"""
    return make_dataset(np.asarray(values, dtype=float).reshape(-1, 1), prefix)


def unit_weights(n: int) -> WeightVector:
    return WeightVector(np.ones(n))
