"""
比較手法サービス
固定関数形によるパラメータ化（LVD・カットイン）、ガウス分布モデル、
学習データの復元抽出といった比較用の生成手法を提供する。
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.integrate import trapezoid

from services.errors import LayoutMismatch, NegativeDuration, SingularCovariance
from services.scenario_service import (
    CUT_IN_SCHEMA,
    LVD_SCHEMA,
    Dataset,
    ParameterLayout,
    ParameterVector,
)

_logger = logging.getLogger(__name__)

COVARIANCE_JITTER = 1e-10
# 全点が同一で共分散のトレースが0の場合に使う絶対ジッタ
ABSOLUTE_JITTER = 1e-14


@dataclass(frozen=True)
class FixedLvdParams:
    speed_reduction: float
    final_speed: float
    duration: float
    initial_time_gap: float

    def as_array(self) -> np.ndarray:
        return np.array([self.speed_reduction, self.final_speed, self.duration, self.initial_time_gap])


@dataclass(frozen=True)
class FixedCutinParams:
    mean_speed: float
    initial_lateral_position: float
    duration: float
    ego_initial_speed: float
    initial_longitudinal_position: float

    def as_array(self) -> np.ndarray:
        return np.array([
            self.mean_speed,
            self.initial_lateral_position,
            self.duration,
            self.ego_initial_speed,
            self.initial_longitudinal_position,
        ])


# 固定パラメータ行列で継続時間が入っている列
DURATION_COLUMN = 2


def _unit_grid(n_t: int) -> np.ndarray:
    return np.arange(n_t) / (n_t - 1)


def _check_layout(layout: ParameterLayout, schema) -> None:
    if layout.signal_names != schema.signal_names or layout.static_names != schema.static_names:
        raise LayoutMismatch(f"{schema.category.value} のレイアウトではありません")


def is_lvd_layout(layout: ParameterLayout) -> bool:
    return layout.signal_names == LVD_SCHEMA.signal_names and layout.static_names == LVD_SCHEMA.static_names


def is_cutin_layout(layout: ParameterLayout) -> bool:
    return layout.signal_names == CUT_IN_SCHEMA.signal_names and layout.static_names == CUT_IN_SCHEMA.static_names


def resample_training(x: Dataset, n_w: int, rng=None) -> Dataset:
    """学習データから n_w 件を一様に復元抽出する。"""
    if n_w < 1:
        raise ValueError(f"抽出数は1以上が必要です: {n_w}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    idx = gen.integers(0, len(x), size=n_w)
    return x.subset(idx)


# ---------- LVD: 半余弦ランプ ----------

def fit_fixed_lvd(vector: ParameterVector) -> FixedLvdParams:
    """
    LVD ベクトルから固定パラメータを取り出す。

    継続時間・初速・初期車間時間は静的パラメータから直接読む。速度低下 Δv = v(t0) − v(t1) は
    加速度チャネルの積分 −T·∫a dτ（台形則）で、グリッド上の ∫sin(πτ)dτ で正規化して
    半余弦ランプから合成したベクトルでは厳密に戻るようにする。最終速度は v0 − Δv。
    """
    layout = vector.layout
    _check_layout(layout, LVD_SCHEMA)
    params = _fit_lvd_rows(vector.values.reshape(1, -1), layout)[0]
    return FixedLvdParams(*params.tolist())


def _fit_lvd_rows(values: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    n_t = layout.n_t
    accel = values[:, :n_t]
    duration = values[:, layout.static_index("duration")]
    v0 = values[:, layout.static_index("initial_lead_speed")]
    gap = values[:, layout.static_index("initial_time_gap")]
    if np.any(duration <= 0):
        raise NegativeDuration(float(duration.min()))
    tau = _unit_grid(n_t)
    ramp_area = float(trapezoid(np.sin(math.pi * tau), tau))
    drop = -(2.0 * duration / math.pi) * trapezoid(accel, tau, axis=1) / ramp_area
    return np.column_stack([drop, v0 - drop, duration, gap])


def synth_fixed_lvd(params: FixedLvdParams, n_t: int) -> ParameterVector:
    """
    固定パラメータから LVD ベクトルを合成する。

    速度 v(τ) = v_end + Δv(1+cos πτ)/2 を解析的に微分した加速度を n_t 点に並べる
    （両端で加速度0）。
    """
    layout = LVD_SCHEMA.layout(n_t)
    return ParameterVector(_synth_lvd_rows(params.as_array().reshape(1, -1), layout)[0], layout)


def _synth_lvd_rows(params: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    drop, final, duration, gap = params.T
    if np.any(duration <= 0):
        raise NegativeDuration(float(duration.min()))
    tau = _unit_grid(layout.n_t)
    accel = -(math.pi * drop / (2.0 * duration))[:, None] * np.sin(math.pi * tau)[None, :]
    statics = np.column_stack([duration, final + drop, gap])
    return np.hstack([accel, statics])


# ---------- カットイン: 一定速度 + 半余弦の横移動 ----------

def fit_fixed_cutin(vector: ParameterVector) -> FixedCutinParams:
    """
    カットインベクトルから固定パラメータを取り出す。
    平均速度は速度チャネルの時間平均、初期横位置は横位置チャネルの最初の値。
    """
    layout = vector.layout
    _check_layout(layout, CUT_IN_SCHEMA)
    params = _fit_cutin_rows(vector.values.reshape(1, -1), layout)[0]
    return FixedCutinParams(*params.tolist())


def _fit_cutin_rows(values: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    n_t = layout.n_t
    speed = values[:, layout.signal_indices("cutin_speed")]
    lateral = values[:, layout.signal_indices("lateral_position")]
    duration = values[:, layout.static_index("duration")]
    if np.any(duration <= 0):
        raise NegativeDuration(float(duration.min()))
    mean_speed = trapezoid(speed, _unit_grid(n_t), axis=1)
    return np.column_stack([
        mean_speed,
        lateral[:, 0],
        duration,
        values[:, layout.static_index("ego_initial_speed")],
        values[:, layout.static_index("initial_longitudinal_position")],
    ])


def synth_fixed_cutin(params: FixedCutinParams, n_t: int) -> ParameterVector:
    """速度一定、横位置 y(τ) = y0(1+cos πτ)/2 のカットインベクトルを合成する（y(1) = 0）。"""
    layout = CUT_IN_SCHEMA.layout(n_t)
    return ParameterVector(_synth_cutin_rows(params.as_array().reshape(1, -1), layout)[0], layout)


def _synth_cutin_rows(params: np.ndarray, layout: ParameterLayout) -> np.ndarray:
    mean_speed, y0, duration, ego_speed, longitudinal = params.T
    if np.any(duration <= 0):
        raise NegativeDuration(float(duration.min()))
    tau = _unit_grid(layout.n_t)
    n = params.shape[0]
    series = np.empty((n, layout.n_t, 2))
    series[:, :, layout.signal_names.index("cutin_speed")] = mean_speed[:, None]
    lateral = y0[:, None] * (1.0 + np.cos(math.pi * tau))[None, :] / 2.0
    lateral[:, -1] = 0.0
    series[:, :, layout.signal_names.index("lateral_position")] = lateral
    statics = np.column_stack([duration, ego_speed, longitudinal])
    return np.hstack([series.reshape(n, -1), statics])


def fixed_parameter_matrix(dataset: Dataset) -> np.ndarray:
    """データセットの各行から固定パラメータを取り出した行列（LVD: 4列、カットイン: 5列）。"""
    layout = dataset.layout
    if is_lvd_layout(layout):
        return _fit_lvd_rows(dataset.vectors, layout)
    if is_cutin_layout(layout):
        return _fit_cutin_rows(dataset.vectors, layout)
    raise LayoutMismatch("固定パラメータ化は LVD とカットインのレイアウトのみ対応しています")


def synth_fixed_dataset(params: np.ndarray, layout: ParameterLayout, prefix: str = "fixed") -> Dataset:
    """固定パラメータ行列からデータセットを合成する。"""
    params = np.atleast_2d(params)
    if is_lvd_layout(layout):
        values = _synth_lvd_rows(params, layout)
    elif is_cutin_layout(layout):
        values = _synth_cutin_rows(params, layout)
    else:
        raise LayoutMismatch("固定パラメータ化は LVD とカットインのレイアウトのみ対応しています")
    ids = tuple(f"{prefix}-{i:05d}" for i in range(values.shape[0]))
    return Dataset(values, ids, layout)


# ---------- ガウス分布モデル ----------

@dataclass(frozen=True)
class GaussianModel:
    """平均と共分散（independent なら対角のみ）。"""

    mean: np.ndarray
    covariance: np.ndarray
    independent: bool = False

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float, copy=True).ravel()
        cov = np.array(self.covariance, dtype=float, copy=True).reshape(mean.size, mean.size)
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(cov).max(initial=0.0)))):
            raise ValueError("共分散行列が対称ではありません")
        scale = max(1.0, float(np.trace(cov)))
        if mean.size and float(np.linalg.eigvalsh(cov).min()) < -1e-10 * scale:
            raise ValueError("共分散行列が半正定値ではありません")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def d(self) -> int:
        return self.mean.size

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "independent": self.independent,
        }


def fit_gaussian(data, independent: bool = False) -> GaussianModel:
    """
    標本平均と母共分散（1/N）でガウス分布を当てはめる。

    Args:
        data: (N, d) 行列（N ≥ 2）
        independent: True なら非対角成分を0にする（単変量ガウスの組）
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    if data.shape[0] < 2:
        raise ValueError("ガウス分布の当てはめには2行以上が必要です")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / data.shape[0]
    cov = (cov + cov.T) / 2.0
    if independent:
        cov = np.diag(np.diag(cov))
    return GaussianModel(mean, cov, independent)


def _cholesky_factor(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        pass
    trace = float(np.trace(cov))
    eps = COVARIANCE_JITTER * trace / d if trace > 0 else ABSOLUTE_JITTER
    _logger.warning("共分散行列が特異に近いため ε=%.3g を対角に加えます", eps)
    try:
        return linalg.cholesky(cov + eps * np.eye(d), lower=True)
    except linalg.LinAlgError as e:
        raise SingularCovariance(f"正則化後もコレスキー分解できません: {e}") from e


def sample_gaussian(model: GaussianModel, n: int, rng=None) -> np.ndarray:
    """ガウス分布から n 点を抽出する（共分散のコレスキー因子を使用）。"""
    if n < 1:
        raise ValueError(f"抽出数は1以上が必要です: {n}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if model.independent:
        std = np.sqrt(np.clip(np.diag(model.covariance), 0.0, None))
        return model.mean + gen.standard_normal((n, model.d)) * std
    factor = _cholesky_factor(model.covariance)
    return model.mean + gen.standard_normal((n, model.d)) @ factor.T
