"""
シナリオモデルサービス
記録シナリオの時系列を固定グリッドに再サンプリングし、パラメータベクトルを組み立てる。
重み（α）の計算と学習・テスト分割もここで行う。
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from services.errors import (
    DegenerateSplit,
    EmptySignal,
    InputFormatError,
    InsufficientSamplesForSpline,
    LayoutMismatch,
    MissingStatic,
    NonMonotonicTimestamps,
    ZeroVariance,
)

_logger = logging.getLogger(__name__)

INTERPOLATION_METHODS = ("linear", "cubic_spline")

# ゼロ分散を許容する場合の標準偏差の下限（平均絶対値に対する比）
ZERO_VARIANCE_FLOOR = 1e-12


class ScenarioCategory(str, Enum):
    LVD = "lvd"
    CUT_IN = "cut_in"
    CUSTOM = "custom"


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Scenario:
    """
    記録された1シナリオ。

    signals は 信号名 → (k, 2) 配列 [[t, v], ...]、statics は 名前 → 値。
    units は信号名・静的パラメータ名 → 単位文字列（任意）。
    各信号の時刻は [t0, t1] 内で狭義単調増加であること。
    """

    id: str
    t0: float
    t1: float
    signals: Mapping[str, np.ndarray]
    statics: Mapping[str, float]
    category: ScenarioCategory = ScenarioCategory.CUSTOM
    units: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.t0) and math.isfinite(self.t1)) or self.t1 <= self.t0:
            raise InputFormatError(f"シナリオ {self.id}: t1 > t0 が必要です（t0={self.t0}, t1={self.t1}）")
        signals = {}
        for name, samples in self.signals.items():
            arr = np.array(samples, dtype=float, copy=True).reshape(-1, 2) if len(samples) else np.empty((0, 2))
            ts = arr[:, 0]
            if not np.all(np.isfinite(ts)) or np.any(ts < self.t0) or np.any(ts > self.t1):
                raise InputFormatError(
                    f"シナリオ {self.id}: 信号 '{name}' の時刻が [t0, t1]=[{self.t0}, {self.t1}] の範囲外です"
                )
            if np.any(np.diff(ts) <= 0):
                raise NonMonotonicTimestamps(name)
            arr.setflags(write=False)
            signals[name] = arr
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "statics", {k: float(v) for k, v in self.statics.items()})
        object.__setattr__(self, "category", ScenarioCategory(self.category))
        object.__setattr__(self, "units", dict(self.units))

    @property
    def duration(self) -> float:
        return self.t1 - self.t0


@dataclass(frozen=True)
class ParameterLayout:
    """パラメータベクトルの並び（n_t, 信号名の順, 静的パラメータ名の順）。"""

    n_t: int
    signal_names: tuple[str, ...]
    static_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "signal_names", tuple(self.signal_names))
        object.__setattr__(self, "static_names", tuple(self.static_names))
        if self.n_t < 2 and self.signal_names:
            raise ValueError(f"n_t は2以上が必要です: {self.n_t}")

    @property
    def n_y(self) -> int:
        return len(self.signal_names)

    @property
    def n_theta(self) -> int:
        return len(self.static_names)

    @property
    def n_x(self) -> int:
        return self.n_t * self.n_y + self.n_theta

    def column_names(self) -> list[str]:
        """CSVヘッダ用の列名。時刻kの全信号が時刻k+1より先に並ぶ。"""
        names = [f"sig.{name}.{k}" for k in range(self.n_t) for name in self.signal_names]
        names += [f"static.{name}" for name in self.static_names]
        return names

    def signal_indices(self, name: str) -> np.ndarray:
        """信号 name が占めるベクトル内の添字。"""
        j = self.signal_names.index(name)
        return np.arange(self.n_t) * self.n_y + j

    def static_index(self, name: str) -> int:
        return self.n_t * self.n_y + self.static_names.index(name)

    def to_dict(self) -> dict:
        return {
            "n_t": self.n_t,
            "signal_names": list(self.signal_names),
            "static_names": list(self.static_names),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParameterLayout":
        return cls(int(data["n_t"]), tuple(data["signal_names"]), tuple(data["static_names"]))


@dataclass(frozen=True)
class ScenarioSchema:
    """シナリオカテゴリごとの信号・静的パラメータ定義。"""

    category: ScenarioCategory
    signal_names: tuple[str, ...]
    static_names: tuple[str, ...]
    units: Mapping[str, str] = field(default_factory=dict)

    def layout(self, n_t: int) -> ParameterLayout:
        return ParameterLayout(n_t, self.signal_names, self.static_names)


LVD_SCHEMA = ScenarioSchema(
    category=ScenarioCategory.LVD,
    signal_names=("lead_acceleration",),
    static_names=("duration", "initial_lead_speed", "initial_time_gap"),
    units={
        "lead_acceleration": "m/s^2",
        "duration": "s",
        "initial_lead_speed": "m/s",
        "initial_time_gap": "s",
    },
)

CUT_IN_SCHEMA = ScenarioSchema(
    category=ScenarioCategory.CUT_IN,
    signal_names=("cutin_speed", "lateral_position"),
    static_names=("duration", "ego_initial_speed", "initial_longitudinal_position"),
    units={
        "cutin_speed": "m/s",
        "lateral_position": "m",
        "duration": "s",
        "ego_initial_speed": "m/s",
        "initial_longitudinal_position": "m",
    },
)

SCHEMAS = {
    ScenarioCategory.LVD: LVD_SCHEMA,
    ScenarioCategory.CUT_IN: CUT_IN_SCHEMA,
}


@dataclass(frozen=True)
class ParameterVector:
    values: np.ndarray
    layout: ParameterLayout

    def __post_init__(self):
        values = _frozen_array(self.values).ravel()
        if values.shape[0] != self.layout.n_x:
            raise LayoutMismatch(
                f"ベクトル長 {values.shape[0]} がレイアウトの n_x={self.layout.n_x} と一致しません"
            )
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class WeightVector:
    alpha: np.ndarray
    group_constants: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        alpha = _frozen_array(self.alpha).ravel()
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise ValueError("重みαは全て正の有限値である必要があります")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "group_constants", dict(self.group_constants))

    def __len__(self) -> int:
        return self.alpha.shape[0]


@dataclass(frozen=True)
class Dataset:
    """パラメータベクトルの集合（行 = シナリオ）。学習 X・テスト Z・生成 W のいずれにも使う。"""

    vectors: np.ndarray
    ids: tuple[str, ...]
    layout: ParameterLayout

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=float, copy=True)
        if vectors.ndim == 1:
            vectors = vectors.reshape(1, -1)
        if vectors.shape[0] == 0:
            raise InputFormatError("データセットが空です")
        if vectors.shape[1] != self.layout.n_x:
            raise LayoutMismatch(
                f"データセットの列数 {vectors.shape[1]} がレイアウトの n_x={self.layout.n_x} と一致しません"
            )
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != vectors.shape[0]:
            raise InputFormatError(f"ID数 {len(ids)} と行数 {vectors.shape[0]} が一致しません")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def vector(self, i: int) -> ParameterVector:
        return ParameterVector(self.vectors[i], self.layout)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.vectors[idx], tuple(self.ids[i] for i in idx), self.layout)

    @classmethod
    def from_vectors(cls, vectors: Sequence[ParameterVector], ids: Sequence[str]) -> "Dataset":
        if not vectors:
            raise InputFormatError("データセットが空です")
        layout = vectors[0].layout
        for v in vectors:
            if v.layout != layout:
                raise LayoutMismatch("データセット内のレイアウトが一致しません")
        return cls(np.vstack([v.values for v in vectors]), tuple(ids), layout)


def check_same_layout(*datasets: Dataset) -> ParameterLayout:
    """全データセットのレイアウトが一致することを確認し、そのレイアウトを返す。"""
    layout = datasets[0].layout
    for ds in datasets[1:]:
        if ds.layout.n_x != layout.n_x or ds.layout != layout:
            raise LayoutMismatch("データセットのレイアウトが一致しません")
    return layout


def _check_signal(name: str, samples: np.ndarray, method: str) -> None:
    if samples.shape[0] < 2:
        raise EmptySignal(name, samples.shape[0])
    if np.any(np.diff(samples[:, 0]) <= 0):
        raise NonMonotonicTimestamps(name)
    if method == "cubic_spline" and samples.shape[0] < 4:
        raise InsufficientSamplesForSpline(name, samples.shape[0])


def time_grid(t0: float, t1: float, n_t: int) -> np.ndarray:
    """t0 + k(t1−t0)/(n_t−1), k=0..n_t−1 の時刻グリッド。"""
    grid = t0 + np.arange(n_t) * (t1 - t0) / (n_t - 1)
    grid[-1] = t1
    return grid


def resample_time_series(
    scenario: Scenario,
    n_t: int,
    method: str = "cubic_spline",
    signal_names: Sequence[str] | None = None,
) -> np.ndarray:
    """
    全信号を [t0, t1] の等間隔 n_t 点に再サンプリングする。

    Args:
        scenario: 対象シナリオ
        n_t: グリッド点数（2以上）
        method: 'linear' または 'cubic_spline'（自然スプライン）
        signal_names: 列の順序。省略時はシナリオの信号順

    Returns:
        (n_t, n_y) 行列。行kは時刻 t0 + k(t1−t0)/(n_t−1) の全信号。
        記録範囲外の時刻は最初・最後のサンプル値で保持する。
    """
    if method not in INTERPOLATION_METHODS:
        raise ValueError(f"未対応の補間方法: {method}")
    if n_t < 2:
        raise ValueError(f"n_t は2以上が必要です: {n_t}")
    names = list(signal_names) if signal_names is not None else list(scenario.signals)
    grid = time_grid(scenario.t0, scenario.t1, n_t)
    out = np.empty((n_t, len(names)))
    for j, name in enumerate(names):
        if name not in scenario.signals:
            raise EmptySignal(name, 0)
        samples = scenario.signals[name]
        _check_signal(name, samples, method)
        ts, vs = samples[:, 0], samples[:, 1]
        if method == "linear":
            col = np.interp(grid, ts, vs)
        else:
            spline = CubicSpline(ts, vs, bc_type="natural")
            col = spline(np.clip(grid, ts[0], ts[-1]))
        # 端点は記録の最初・最後のサンプルを厳密に再現する
        col[0] = vs[0] if grid[0] <= ts[0] else col[0]
        col[-1] = vs[-1] if grid[-1] >= ts[-1] else col[-1]
        out[:, j] = col
    return out


def assemble_parameter_vector(
    scenario: Scenario,
    n_t: int,
    method: str = "cubic_spline",
    layout: ParameterLayout | None = None,
) -> ParameterVector:
    """
    シナリオを1本のパラメータベクトル x_i にまとめる。

    先頭 n_t·n_y 要素は時刻順（時刻kの全信号 → 時刻k+1）、末尾 n_θ 要素が静的パラメータ。
    """
    if layout is None:
        layout = ParameterLayout(n_t, tuple(scenario.signals), tuple(scenario.statics))
    elif layout.n_t != n_t:
        raise LayoutMismatch(f"レイアウトの n_t={layout.n_t} と指定 n_t={n_t} が一致しません")
    statics = []
    for name in layout.static_names:
        if name not in scenario.statics:
            raise MissingStatic(name)
        statics.append(scenario.statics[name])
    if layout.n_y:
        series = resample_time_series(scenario, n_t, method, layout.signal_names)
        values = np.concatenate([series.ravel(), np.asarray(statics, dtype=float)])
    else:
        values = np.asarray(statics, dtype=float)
    return ParameterVector(values, layout)


def assemble_dataset(
    scenarios: Sequence[Scenario],
    n_t: int,
    method: str = "cubic_spline",
    layout: ParameterLayout | None = None,
) -> Dataset:
    """シナリオ列をデータセットにまとめる。信号名・静的パラメータ名は全シナリオで一致が必要。"""
    if not scenarios:
        raise InputFormatError("シナリオがありません")
    if layout is None:
        first = scenarios[0]
        schema = SCHEMAS.get(first.category)
        if schema and set(schema.signal_names) == set(first.signals) and set(schema.static_names) == set(first.statics):
            layout = schema.layout(n_t)
        else:
            layout = ParameterLayout(n_t, tuple(first.signals), tuple(first.statics))
    signal_set = set(layout.signal_names)
    static_set = set(layout.static_names)
    vectors = []
    for sc in scenarios:
        if set(sc.signals) != signal_set or set(sc.statics) != static_set:
            raise LayoutMismatch(f"シナリオ {sc.id} の信号・静的パラメータ名がデータセットと一致しません")
        vectors.append(assemble_parameter_vector(sc, n_t, method, layout).values)
    _logger.info("%d シナリオを n_x=%d のベクトルに変換しました", len(vectors), layout.n_x)
    return Dataset(np.vstack(vectors), tuple(sc.id for sc in scenarios), layout)


def slice_parameter_vector(vector: ParameterVector) -> tuple[np.ndarray, dict[str, float]]:
    """assemble_parameter_vector の逆。(n_t, n_y) 行列と静的パラメータ辞書を返す。"""
    layout = vector.layout
    n_series = layout.n_t * layout.n_y
    series = vector.values[:n_series].reshape(layout.n_t, layout.n_y)
    statics = dict(zip(layout.static_names, vector.values[n_series:].tolist()))
    return series, statics


def default_group_constants(layout: ParameterLayout) -> dict[str, tuple[list[int], float]]:
    """
    重み定数 w̄ のデフォルト。
    時系列の各要素は 1/√n_t、静的パラメータは 1（各信号と各静的パラメータの寄与を等しくする）。
    """
    groups: dict[str, tuple[list[int], float]] = {}
    for name in layout.signal_names:
        groups[f"sig.{name}"] = (layout.signal_indices(name).tolist(), 1.0 / math.sqrt(layout.n_t))
    for name in layout.static_names:
        groups[f"static.{name}"] = ([layout.static_index(name)], 1.0)
    return groups


def compute_weights(
    dataset: Dataset,
    group_constants: Mapping[str, tuple[Sequence[int], float]] | None = None,
    floor_zero_variance: bool = False,
) -> WeightVector:
    """
    重み α_k = w̄_k / std_k を計算する（std は 1/N の母標準偏差）。

    Args:
        dataset: 学習データ
        group_constants: グループ名 → (添字リスト, w̄)。全添字がちょうど1つのグループに属すこと
        floor_zero_variance: True なら std を平均絶対値の 1e-12 倍で下限処理する

    Returns:
        WeightVector（group_constants はグループ名 → w̄）
    """
    n_x = dataset.layout.n_x
    if group_constants is None:
        group_constants = default_group_constants(dataset.layout)
    w_bar = np.full(n_x, np.nan)
    for name, (indices, constant) in group_constants.items():
        idx = np.asarray(indices, dtype=int)
        if np.any(~np.isnan(w_bar[idx])):
            raise ValueError(f"グループ '{name}' の添字が他のグループと重複しています")
        if not (constant > 0 and math.isfinite(constant)):
            raise ValueError(f"グループ '{name}' の w̄ は正の有限値が必要です: {constant}")
        w_bar[idx] = constant
    if np.any(np.isnan(w_bar)):
        missing = np.flatnonzero(np.isnan(w_bar)).tolist()
        raise ValueError(f"どのグループにも属さない添字があります: {missing}")

    std = dataset.vectors.std(axis=0)
    zero = np.flatnonzero(std <= 0)
    if zero.size:
        if not floor_zero_variance:
            raise ZeroVariance(int(zero[0]))
        floor = ZERO_VARIANCE_FLOOR * np.abs(dataset.vectors.mean(axis=0))
        floor[floor <= 0] = ZERO_VARIANCE_FLOOR
        _logger.warning("ゼロ分散のパラメータ %s の標準偏差を下限処理しました", zero.tolist())
        std = np.maximum(std, floor)
    return WeightVector(w_bar / std, {name: float(c) for name, (_, c) in group_constants.items()})


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """
    一様シャッフルで学習・テストに分割する。|test| = round(fraction·N)（0.5は切り上げ）。

    Returns:
        (train, test)。各集合内の順序は元の順序を保つ。
    """
    n = len(dataset)
    if not 0 < test_fraction < 1:
        raise DegenerateSplit(f"test_fraction は (0, 1) の範囲が必要です: {test_fraction}")
    n_test = int(math.floor(test_fraction * n + 0.5))
    if n < 2 or n_test < 1 or n - n_test < 1:
        raise DegenerateSplit(f"N={n}, test_fraction={test_fraction} では両側に1件以上を確保できません")
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def weighted_vectors(dataset: Dataset, weights: WeightVector) -> np.ndarray:
    """α⊙x_i を行に並べた行列。"""
    if len(weights) != dataset.layout.n_x:
        raise LayoutMismatch(f"重みの長さ {len(weights)} が n_x={dataset.layout.n_x} と一致しません")
    return dataset.vectors * weights.alpha
