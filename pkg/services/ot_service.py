"""
最適輸送メトリクスサービス
2つの一様経験分布間の経験的 Wasserstein 距離を輸送問題の厳密解で求め、
過学習ペナルティ付きのシナリオ代表性（SR）メトリクスを計算する。
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import ot
from scipy.spatial.distance import cdist

from services.errors import LayoutMismatch, SolverNonConvergence
from services.scenario_service import (
    Dataset,
    ParameterVector,
    WeightVector,
    check_same_layout,
    weighted_vectors,
)

_logger = logging.getLogger(__name__)

# これを超える要素数のコスト行列は行タイルごとに計算する
DENSE_COST_LIMIT = 10_000_000
OT_METHODS = ("exact", "sinkhorn")


@dataclass(frozen=True)
class TransportPlan:
    """
    最適輸送計画（疎表現）。rows[k], cols[k] に質量 masses[k] を運ぶ。

    cost は Σ d(z_i, w_j)^p t_ij、duality_gap は主問題と双対問題の目的関数値の差。
    """

    rows: np.ndarray
    cols: np.ndarray
    masses: np.ndarray
    n_z: int
    n_w: int
    cost: float
    p: float
    duality_gap: float = 0.0

    @property
    def value(self) -> float:
        return max(self.cost, 0.0) ** (1.0 / self.p)

    @property
    def nnz(self) -> int:
        return int(self.masses.shape[0])

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_z, self.n_w))
        dense[self.rows, self.cols] = self.masses
        return dense

    def triples(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(m)) for i, j, m in zip(self.rows, self.cols, self.masses)]

    def summary(self) -> dict:
        return {
            "n_z": self.n_z,
            "n_w": self.n_w,
            "nnz": self.nnz,
            "cost": self.cost,
            "p": self.p,
            "duality_gap": self.duality_gap,
        }


@dataclass(frozen=True)
class MetricReport:
    """SRメトリクス D̂_p = Ŵ_p(Z,W) + β(Ŵ_p(Z,W) − Ŵ_p(X,W)) とその構成要素。"""

    w_test: float
    w_train: float
    sr: float
    beta: float
    p: float
    plan_test: TransportPlan | None = field(default=None, compare=False, repr=False)
    plan_train: TransportPlan | None = field(default=None, compare=False, repr=False)

    @property
    def penalty(self) -> float:
        return self.w_test - self.w_train

    def with_beta(self, beta: float) -> "MetricReport":
        """同じ (w_test, w_train) から別の β で計算し直す。"""
        return MetricReport(
            self.w_test,
            self.w_train,
            sr_from_triple(self.w_test, self.w_train, beta),
            beta,
            self.p,
        )

    def to_dict(self) -> dict:
        data = {
            "w_test": self.w_test,
            "w_train": self.w_train,
            "penalty": self.penalty,
            "sr": self.sr,
            "beta": self.beta,
            "p": self.p,
        }
        if self.plan_test is not None:
            data["plan_test"] = self.plan_test.summary()
        if self.plan_train is not None:
            data["plan_train"] = self.plan_train.summary()
        return data


def sr_from_triple(w_test: float, w_train: float, beta: float) -> float:
    return w_test + beta * (w_test - w_train)


def pairwise_distance(a: ParameterVector, b: ParameterVector, weights: WeightVector) -> float:
    """重み付き2ノルム ‖α⊙a − α⊙b‖₂（指数 p は輸送問題の目的関数側で掛ける）。"""
    if a.layout != b.layout:
        raise LayoutMismatch("2つのベクトルのレイアウトが一致しません")
    if len(weights) != a.layout.n_x:
        raise LayoutMismatch(f"重みの長さ {len(weights)} が n_x={a.layout.n_x} と一致しません")
    return float(np.linalg.norm(weights.alpha * a.values - weights.alpha * b.values))


def cost_matrix(source: np.ndarray, target: np.ndarray, p: float = 1.0) -> np.ndarray:
    """
    距離の p 乗を並べたコスト行列。要素数が DENSE_COST_LIMIT を超える場合は行タイルで計算する。
    """
    n_a, n_b = source.shape[0], target.shape[0]
    if n_a * n_b <= DENSE_COST_LIMIT:
        dist = cdist(source, target, "euclidean")
        return dist if p == 1.0 else dist**p
    cost = np.empty((n_a, n_b))
    tile = max(1, DENSE_COST_LIMIT // n_b)
    for start in range(0, n_a, tile):
        block = cdist(source[start:start + tile], target, "euclidean")
        cost[start:start + tile] = block if p == 1.0 else block**p
    _logger.debug("コスト行列 %dx%d をタイル %d 行で計算しました", n_a, n_b, tile)
    return cost


def _solve_exact(a: np.ndarray, b: np.ndarray, cost: np.ndarray, p: float) -> TransportPlan:
    n_z, n_w = cost.shape
    max_iter = max(10_000_000, 5 * n_z * n_w)
    plan, log = ot.emd(a, b, cost, numItermax=max_iter, log=True)
    if log.get("warning") or int(log.get("result_code", 1)) != 1:
        raise SolverNonConvergence(
            f"輸送問題の厳密解が得られませんでした（{n_z}x{n_w}）: {log.get('warning')}"
        )
    primal = float(np.sum(plan * cost))
    dual = float(np.dot(a, log["u"]) + np.dot(b, log["v"]))
    rows, cols = np.nonzero(plan > 0)
    return TransportPlan(
        rows=rows,
        cols=cols,
        masses=plan[rows, cols],
        n_z=n_z,
        n_w=n_w,
        cost=primal,
        p=p,
        duality_gap=abs(primal - dual),
    )


def _solve_sinkhorn(a: np.ndarray, b: np.ndarray, cost: np.ndarray, p: float, reg: float) -> TransportPlan:
    n_z, n_w = cost.shape
    plan = ot.sinkhorn(a, b, cost, reg, numItermax=10_000)
    rows, cols = np.nonzero(plan > 0)
    return TransportPlan(rows, cols, plan[rows, cols], n_z, n_w, float(np.sum(plan * cost)), p)


def wasserstein_between(
    source: np.ndarray,
    target: np.ndarray,
    p: float = 1.0,
    method: str = "exact",
    reg: float = 0.05,
) -> TransportPlan:
    """
    重み付け済みの点集合（行 = 点）どうしの経験的 Wasserstein 距離の輸送計画。

    各点の質量は 1/N_z, 1/N_w。method='exact' はネットワーク単体法による厳密解、
    'sinkhorn' はエントロピー正則化による近似（受け入れ試験では使わない）。
    """
    if p < 1:
        raise ValueError(f"p は1以上が必要です: {p}")
    if method not in OT_METHODS:
        raise ValueError(f"未対応の輸送ソルバー: {method}")
    source = np.atleast_2d(np.asarray(source, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if source.shape[1] != target.shape[1]:
        raise LayoutMismatch(f"点の次元が一致しません: {source.shape[1]} と {target.shape[1]}")
    a = np.full(source.shape[0], 1.0 / source.shape[0])
    b = np.full(target.shape[0], 1.0 / target.shape[0])
    cost = cost_matrix(source, target, p)
    if method == "sinkhorn":
        return _solve_sinkhorn(a, b, cost, p, reg)
    return _solve_exact(a, b, cost, p)


def empirical_wasserstein(
    z: Dataset,
    w: Dataset,
    weights: WeightVector,
    p: float = 1.0,
    method: str = "exact",
    reg: float = 0.05,
) -> tuple[float, TransportPlan]:
    """
    Ŵ_p(Z, W) = (min_T Σ_ij d(z_i, w_j)^p t_ij)^{1/p}。

    Args:
        z: 比較元データセット（テストデータなど）
        w: 比較先データセット（生成データなど）
        weights: 距離計算の重みα
        p: 次数（1以上、デフォルト1）
        method: 'exact' または 'sinkhorn'
        reg: sinkhorn の正則化係数

    Returns:
        (距離, 輸送計画)
    """
    check_same_layout(z, w)
    plan = wasserstein_between(
        weighted_vectors(z, weights),
        weighted_vectors(w, weights),
        p=p,
        method=method,
        reg=reg,
    )
    return plan.value, plan


def sr_metric(
    w: Dataset,
    z: Dataset,
    x: Dataset,
    weights: WeightVector,
    p: float = 1.0,
    beta: float = 0.25,
    keep_plans: bool = False,
) -> MetricReport:
    """
    SRメトリクス D̂_p(W, Z, X) = Ŵ_p(Z,W) + β(Ŵ_p(Z,W) − Ŵ_p(X,W))。

    Args:
        w: 生成データ
        z: テストデータ
        x: 学習データ
        weights: 重みα
        p: 次数
        beta: ペナルティの重み（0以上）
        keep_plans: True なら輸送計画をレポートに添付する
    """
    if beta < 0:
        raise ValueError(f"β は0以上が必要です: {beta}")
    check_same_layout(w, z, x)
    w_test, plan_test = empirical_wasserstein(z, w, weights, p)
    w_train, plan_train = empirical_wasserstein(x, w, weights, p)
    return MetricReport(
        w_test=w_test,
        w_train=w_train,
        sr=sr_from_triple(w_test, w_train, beta),
        beta=beta,
        p=p,
        plan_test=plan_test if keep_plans else None,
        plan_train=plan_train if keep_plans else None,
    )
