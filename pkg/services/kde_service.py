"""
KDE サービス
削減座標上の多変量ガウスカーネル密度推定（H = h²I）。
密度評価、leave-one-out 交差検証によるバンド幅選択、サンプリングを提供する。
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from services.errors import AllPointsIdentical, LayoutMismatch

_logger = logging.getLogger(__name__)

# バンド幅探索: 参照値の 1/20〜20倍、log h 上の粗い走査 → 黄金分割で精緻化
SEARCH_FACTOR = 20.0
SCAN_POINTS = 41
RELATIVE_TOLERANCE = 1e-4

# 密度評価で一度に距離を計算するクエリ行数
_CHUNK_ROWS = 2048


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


@dataclass(frozen=True)
class KdeModel:
    """学習座標 (N_x, d) とスカラーバンド幅 h。"""

    points: np.ndarray
    bandwidth: float

    def __post_init__(self):
        points = np.array(_as_points(self.points), copy=True)
        if points.shape[0] == 0:
            raise ValueError("KDEの点がありません")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"バンド幅は正の有限値が必要です: {self.bandwidth}")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "h": self.bandwidth, "d": self.d}

    @classmethod
    def from_dict(cls, data: dict) -> "KdeModel":
        d = int(data["d"])
        return cls(np.asarray(data["points"], dtype=float).reshape(-1, d), float(data["h"]))


def _log_normalizer(d: int, h: float) -> float:
    return -0.5 * d * math.log(2.0 * math.pi) - d * math.log(h)


def log_density_many(model: KdeModel, queries) -> np.ndarray:
    """各クエリ点の log f̂(v)。"""
    queries = _as_points(queries)
    if queries.shape[1] != model.d:
        raise LayoutMismatch(f"クエリの次元 {queries.shape[1]} が d={model.d} と一致しません")
    h2 = model.bandwidth**2
    offset = _log_normalizer(model.d, model.bandwidth) - math.log(model.points.shape[0])
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], _CHUNK_ROWS):
        block = queries[start:start + _CHUNK_ROWS]
        sq = cdist(block, model.points, "sqeuclidean")
        out[start:start + _CHUNK_ROWS] = logsumexp(-sq / (2.0 * h2), axis=1) + offset
    return out


def density_many(model: KdeModel, queries) -> np.ndarray:
    return np.exp(log_density_many(model, queries))


def density(model: KdeModel, v) -> float:
    """
    f̂(v) = (1/N_x) Σ_i (2π)^{−d/2} h^{−d} exp(−‖v − v_i‖²/(2h²))。

    Args:
        model: KDEモデル
        v: 長さ d の座標

    Returns:
        非負の密度値
    """
    v = np.asarray(v, dtype=float).reshape(1, -1)
    return float(density_many(model, v)[0])


def _pairwise_sqdist(points: np.ndarray) -> np.ndarray:
    sq = cdist(points, points, "sqeuclidean")
    np.fill_diagonal(sq, np.inf)
    return sq


def _loo_from_sqdist(sq: np.ndarray, h: float, d: int) -> float:
    n = sq.shape[0]
    terms = logsumexp(-sq / (2.0 * h * h), axis=1)
    return float(np.mean(terms) - math.log(n - 1) + _log_normalizer(d, h))


def loo_log_likelihood(points, h: float) -> float:
    """
    leave-one-out 対数尤度の平均 (1/N_x) Σ_i log f̂_{−i}(v_i)。

    f̂_{−i} は点 i を除いた N_x−1 点のKDE。対数空間で計算するためアンダーフローしない。
    """
    points = _as_points(points)
    if points.shape[0] < 2:
        raise ValueError("leave-one-out には2点以上が必要です")
    if not h > 0:
        raise ValueError(f"バンド幅は正が必要です: {h}")
    return _loo_from_sqdist(_pairwise_sqdist(points), h, points.shape[1])


def reference_bandwidth(points) -> float:
    """探索区間の中心 h_ref = (4/(d+2))^{1/(d+4)} N^{−1/(d+4)} · 座標ごとの標準偏差の平均。"""
    points = _as_points(points)
    n, d = points.shape
    spread = float(np.mean(points.std(axis=0, ddof=1)))
    return (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4)) * spread


def select_bandwidth(points) -> float:
    """
    LOO 対数尤度を最大にするバンド幅 h* を返す。

    log h 上で [h_ref/20, 20·h_ref] を粗く走査して最良点を挟み、
    その近傍を黄金分割（Brent の有界法）で相対 1e-4 まで詰める。結果は決定的。
    """
    points = _as_points(points)
    if points.shape[0] < 2:
        raise ValueError("バンド幅選択には2点以上が必要です")
    if np.all(points == points[0]):
        raise AllPointsIdentical()

    n, d = points.shape
    sq = _pairwise_sqdist(points)
    h_ref = reference_bandwidth(points)
    lo, hi = math.log(h_ref / SEARCH_FACTOR), math.log(h_ref * SEARCH_FACTOR)

    def objective(log_h: float) -> float:
        return -_loo_from_sqdist(sq, math.exp(log_h), d)

    grid = np.linspace(lo, hi, SCAN_POINTS)
    scores = np.array([objective(g) for g in grid])
    best = int(np.argmin(scores))
    left = grid[max(best - 1, 0)]
    right = grid[min(best + 1, SCAN_POINTS - 1)]
    result = minimize_scalar(
        objective,
        bounds=(left, right),
        method="bounded",
        options={"xatol": RELATIVE_TOLERANCE},
    )
    log_h = float(result.x) if result.fun <= scores[best] else float(grid[best])
    h = math.exp(log_h)
    _logger.info("バンド幅を選択しました: h=%.6g (h_ref=%.6g, N=%d, d=%d)", h, h_ref, n, d)
    return h


def fit_kde(points, bandwidth: float | None = None) -> KdeModel:
    """座標からKDEモデルを作る。bandwidth 省略時は LOO で選択。"""
    points = _as_points(points)
    h = select_bandwidth(points) if bandwidth is None else bandwidth
    return KdeModel(points, h)


def sample(model: KdeModel, n: int, rng=None) -> np.ndarray:
    """
    KDEから n 点を抽出する。学習点を等確率で1つ選び、h·g（g は標準正規）を加える。

    Args:
        model: KDEモデル
        n: 抽出数（1以上）
        rng: シード（int）または numpy Generator

    Returns:
        (n, d) 行列
    """
    if n < 1:
        raise ValueError(f"抽出数は1以上が必要です: {n}")
    gen = _as_generator(rng)
    idx = gen.integers(0, model.points.shape[0], size=n)
    noise = gen.standard_normal((n, model.d))
    return model.points[idx] + model.bandwidth * noise


@dataclass(frozen=True)
class IndependentKdeModel:
    """座標ごとに独立な1次元KDEの組（各座標を独立と仮定する比較手法用）。"""

    marginals: tuple[KdeModel, ...]

    @property
    def d(self) -> int:
        return len(self.marginals)

    def to_dict(self) -> dict:
        return {"marginals": [m.to_dict() for m in self.marginals]}


def fit_independent_kde(points) -> IndependentKdeModel:
    """
    座標ごとに1次元KDEを当てはめる。
    全点が同一の座標は他の座標の最小バンド幅（全て同一なら1e-12）を使う。
    """
    points = _as_points(points)
    bandwidths: list[float | None] = []
    for j in range(points.shape[1]):
        try:
            bandwidths.append(select_bandwidth(points[:, j]))
        except AllPointsIdentical:
            bandwidths.append(None)
    known = [h for h in bandwidths if h is not None]
    fallback = min(known) if known else 1e-12
    marginals = tuple(
        KdeModel(points[:, j], h if h is not None else fallback)
        for j, h in enumerate(bandwidths)
    )
    return IndependentKdeModel(marginals)


def sample_independent(model: IndependentKdeModel, n: int, rng=None) -> np.ndarray:
    """各座標を独立に抽出して並べる。"""
    gen = _as_generator(rng)
    columns = [sample(marginal, n, gen)[:, 0] for marginal in model.marginals]
    return np.column_stack(columns)
