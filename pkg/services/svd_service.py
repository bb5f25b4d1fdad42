"""
SVD 次元削減サービス
重み付き・中心化したパラメータ行列を特異値分解し、d 次元の座標へ射影・再構成する。
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import svds

from services.errors import DTooLarge, LayoutMismatch, ZeroSingularValue
from services.scenario_service import (
    Dataset,
    ParameterLayout,
    ParameterVector,
    WeightVector,
    weighted_vectors,
)

_logger = logging.getLogger(__name__)

SVD_SOLVERS = ("full", "truncated")


@dataclass(frozen=True)
class ReducedBasis:
    """
    μ, α と先頭 d 個の特異値・左特異ベクトル。

    left_vectors は (n_x, d) 行列で列 j が u_j。spectrum は計算済みの全特異値
    （truncated の場合は先頭 d 個のみ）、total_variance は全特異値の二乗和。
    """

    mu: np.ndarray
    weights: WeightVector
    d: int
    singular_values: np.ndarray
    left_vectors: np.ndarray
    n_train: int
    total_variance: float
    spectrum: np.ndarray
    layout: ParameterLayout

    def __post_init__(self):
        for name in ("mu", "singular_values", "left_vectors", "spectrum"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def alpha(self) -> np.ndarray:
        return self.weights.alpha

    @property
    def rank_tolerance(self) -> float:
        """これ以下の特異値は0とみなす。"""
        top = float(self.spectrum[0]) if self.spectrum.size else 0.0
        return max(self.layout.n_x, self.n_train) * np.finfo(float).eps * top

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "mu": self.mu.tolist(),
            "alpha": self.weights.alpha.tolist(),
            "group_constants": dict(self.weights.group_constants),
            "d": self.d,
            "singular_values": self.singular_values.tolist(),
            "left_vectors": self.left_vectors.T.tolist(),
            "n_train": self.n_train,
            "total_variance": self.total_variance,
            "spectrum": self.spectrum.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReducedBasis":
        d = int(data["d"])
        u = np.asarray(data["left_vectors"], dtype=float).reshape(d, -1).T
        return cls(
            mu=np.asarray(data["mu"], dtype=float),
            weights=WeightVector(np.asarray(data["alpha"], dtype=float), data.get("group_constants", {})),
            d=d,
            singular_values=np.asarray(data["singular_values"], dtype=float),
            left_vectors=u,
            n_train=int(data["n_train"]),
            total_variance=float(data["total_variance"]),
            spectrum=np.asarray(data["spectrum"], dtype=float),
            layout=ParameterLayout.from_dict(data["layout"]),
        )


def _apply_sign_convention(u: np.ndarray, vt: np.ndarray) -> None:
    """各 u_j の絶対値最大要素が正になるよう (u_j, V の列 j) の符号を揃える（インプレース）。"""
    for j in range(u.shape[1]):
        k = int(np.argmax(np.abs(u[:, j])))
        if u[k, j] < 0:
            u[:, j] *= -1.0
            vt[j, :] *= -1.0


def _factorize(centered_t: np.ndarray, d: int, solver: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """centered_t (n_x × N_x) を U Σ Vᵀ に分解する。"""
    n_bar = min(centered_t.shape)
    if solver == "truncated" and d < n_bar:
        v0 = np.random.default_rng(0).standard_normal(n_bar)
        u, s, vt = svds(centered_t, k=d, v0=v0, tol=0)
        order = np.argsort(s)[::-1]
        return u[:, order], s[order], vt[order, :]
    if solver == "truncated":
        _logger.debug("d=%d が min(n_x, N_x)=%d に達したため完全SVDで計算します", d, n_bar)
    u, s, vt = linalg.svd(centered_t, full_matrices=False)
    return u, s, vt


def fit_basis(
    train: Dataset,
    weights: WeightVector,
    d: int,
    solver: str = "full",
) -> tuple[ReducedBasis, np.ndarray]:
    """
    重み付き学習データの SVD 基底を作る。

    Args:
        train: 学習データ X
        weights: 重みα
        d: 保持する次元数（1 ≤ d ≤ min(n_x, N_x)）
        solver: 'full'（完全SVD）または 'truncated'（先頭 d 列のみ）

    Returns:
        (ReducedBasis, 学習座標)。学習座標は (N_x, d) 行列で、行 i が V の i 行目の先頭 d 要素。
        特異値が0の方向の座標は0とする。
    """
    if solver not in SVD_SOLVERS:
        raise ValueError(f"未対応のSVDソルバー: {solver}")
    layout = train.layout
    limit = min(layout.n_x, len(train))
    if not 1 <= d <= limit:
        raise DTooLarge(d, limit)

    scaled = weighted_vectors(train, weights)
    mu = scaled.mean(axis=0)
    centered = scaled - mu
    total_variance = float(np.sum(centered * centered))

    u, s, vt = _factorize(centered.T, d, solver)
    u = np.array(u[:, :d] if solver == "full" else u, copy=True)
    vt = np.array(vt[:d, :] if solver == "full" else vt, copy=True)
    _apply_sign_convention(u[:, :d], vt[:d, :])

    basis = ReducedBasis(
        mu=mu,
        weights=weights,
        d=d,
        singular_values=s[:d],
        left_vectors=u[:, :d],
        n_train=len(train),
        total_variance=total_variance,
        spectrum=s,
        layout=layout,
    )
    coords = vt[:d, :].T.copy()
    coords[:, basis.singular_values <= basis.rank_tolerance] = 0.0
    _logger.info(
        "SVD基底を作成しました: d=%d, N_x=%d, 説明分散=%.4f",
        d,
        len(train),
        explained_variance(basis, d),
    )
    return basis, coords


def truncate_basis(basis: ReducedBasis, d: int) -> ReducedBasis:
    """先頭 d 成分だけを残した基底。"""
    if not 1 <= d <= basis.d:
        raise DTooLarge(d, basis.d)
    return ReducedBasis(
        mu=basis.mu,
        weights=basis.weights,
        d=d,
        singular_values=basis.singular_values[:d],
        left_vectors=basis.left_vectors[:, :d],
        n_train=basis.n_train,
        total_variance=basis.total_variance,
        spectrum=basis.spectrum,
        layout=basis.layout,
    )


def _as_values(basis: ReducedBasis, x) -> np.ndarray:
    if isinstance(x, ParameterVector):
        if x.layout != basis.layout:
            raise LayoutMismatch("ベクトルのレイアウトが基底と一致しません")
        return x.values
    values = np.asarray(x, dtype=float)
    if values.shape[-1] != basis.layout.n_x:
        raise LayoutMismatch(f"ベクトル長 {values.shape[-1]} が n_x={basis.layout.n_x} と一致しません")
    return values


def reduce(basis: ReducedBasis, x) -> np.ndarray:
    """
    v_j = u_j·(α⊙x − μ)/σ_j で d 次元座標に射影する（学習外データへの拡張）。

    Args:
        basis: 基底
        x: ParameterVector、長さ n_x の配列、または (N, n_x) 行列

    Returns:
        長さ d の座標（行列入力なら (N, d)）
    """
    values = _as_values(basis, x)
    tol = basis.rank_tolerance
    for j, sigma in enumerate(basis.singular_values, start=1):
        if sigma <= tol:
            raise ZeroSingularValue(j)
    centered = values * basis.alpha - basis.mu
    return (centered @ basis.left_vectors) / basis.singular_values


def reduce_dataset(basis: ReducedBasis, dataset: Dataset) -> np.ndarray:
    return reduce(basis, dataset.vectors)


def reconstruct_values(basis: ReducedBasis, coords: np.ndarray) -> np.ndarray:
    """(μ + Σ_j σ_j v_j u_j) ⊘ α。coords は (d,) または (N, d)。"""
    coords = np.asarray(coords, dtype=float)
    if coords.shape[-1] != basis.d:
        raise LayoutMismatch(f"座標の次元 {coords.shape[-1]} が d={basis.d} と一致しません")
    scaled = basis.mu + (coords * basis.singular_values) @ basis.left_vectors.T
    return scaled / basis.alpha


def reconstruct(basis: ReducedBasis, v) -> ParameterVector:
    """d 次元座標から重みを戻した近似ベクトルを再構成する。"""
    return ParameterVector(reconstruct_values(basis, np.ravel(v)), basis.layout)


def reconstruct_dataset(basis: ReducedBasis, coords: np.ndarray, prefix: str = "gen") -> Dataset:
    """座標行列から生成データセットを作る。ID は prefix-00000 形式。"""
    values = reconstruct_values(basis, np.atleast_2d(coords))
    ids = tuple(f"{prefix}-{i:05d}" for i in range(values.shape[0]))
    return Dataset(values, ids, basis.layout)


def explained_variance(basis: ReducedBasis, d_query: int) -> float:
    """先頭 d_query 個の特異値が説明する分散の割合 Σ_{j≤d} σ_j² / Σ_j σ_j²。"""
    if d_query < 1 or d_query > basis.spectrum.size:
        raise DTooLarge(d_query, int(basis.spectrum.size))
    if basis.total_variance <= 0:
        return 1.0
    captured = float(np.sum(basis.spectrum[:d_query] ** 2))
    return min(1.0, captured / basis.total_variance)


def reconstruction_error(basis: ReducedBasis, train: Dataset, coords: np.ndarray) -> float:
    """重み付き空間での再構成誤差 Σ_i ‖α⊙x_i − (μ + Σ σ_j v_ij u_j)‖²。"""
    scaled = weighted_vectors(train, basis.weights)
    approx = basis.mu + (coords * basis.singular_values) @ basis.left_vectors.T
    return float(np.sum((scaled - approx) ** 2))
