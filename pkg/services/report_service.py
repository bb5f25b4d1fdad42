"""
SVD 診断レポートサービス
基底の平均・特異ベクトルの表、説明分散の表、近似が厳しいコーナーケースの一覧を作る。
"""

import logging

import numpy as np

from services.baseline_service import is_lvd_layout
from services.errors import LayoutMismatch
from services.scenario_service import Dataset
from services.svd_service import ReducedBasis, explained_variance, reconstruct_values

_logger = logging.getLogger(__name__)


def basis_table(basis: ReducedBasis) -> dict:
    """
    μ⊘α と u_j⊘α を元の単位に戻して、静的パラメータと時系列に分けて並べる。

    Returns:
        {"statics": [{"name", "mean", "u_1", ...}], "time_series": {信号名: {"mean": [...], "u_1": [...]}}}
    """
    layout = basis.layout
    mean = basis.mu / basis.alpha
    vectors = basis.left_vectors / basis.alpha[:, None]
    statics = []
    for name in layout.static_names:
        idx = layout.static_index(name)
        row = {"name": name, "mean": float(mean[idx])}
        for j in range(basis.d):
            row[f"u_{j + 1}"] = float(vectors[idx, j])
        statics.append(row)
    series = {}
    for name in layout.signal_names:
        idx = layout.signal_indices(name)
        block = {"mean": mean[idx].tolist()}
        for j in range(basis.d):
            block[f"u_{j + 1}"] = vectors[idx, j].tolist()
        series[name] = block
    return {"statics": statics, "time_series": series}


def explained_variance_table(basis: ReducedBasis, d_max: int | None = None) -> list[dict]:
    """d = 1..d_max の説明分散（単調非減少）。"""
    d_max = basis.spectrum.size if d_max is None else d_max
    return [{"d": d, "explained_variance": explained_variance(basis, d)} for d in range(1, d_max + 1)]


def average_deceleration(values: np.ndarray, layout) -> np.ndarray:
    """LVD の先行車の平均減速度（加速度チャネルの符号反転平均）。"""
    if not is_lvd_layout(layout):
        raise LayoutMismatch("平均減速度は LVD のレイアウトでのみ計算できます")
    return -values[:, layout.signal_indices("lead_acceleration")].mean(axis=1)


def corner_cases(
    basis: ReducedBasis,
    dataset: Dataset,
    coords: np.ndarray,
    k: int = 5,
    score=None,
) -> list[dict]:
    """
    スコアの大きい k 件について、σ_j·v_ij の項と静的パラメータの元の値・近似値を並べる。

    Args:
        basis: 学習データの基底
        dataset: 基底を作った学習データ（coords と同じ行順）
        coords: 学習座標 (N, d)
        k: 件数
        score: (値行列, レイアウト) → スコア配列。省略時は LVD の平均減速度
    """
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if coords.shape[0] != len(dataset):
        raise LayoutMismatch(f"座標の行数 {coords.shape[0]} がデータ件数 {len(dataset)} と一致しません")
    if k < 1:
        raise ValueError(f"k は1以上が必要です: {k}")
    score = score or average_deceleration
    scores = np.asarray(score(dataset.vectors, dataset.layout), dtype=float)
    order = np.argsort(-scores, kind="stable")[:k]
    approx = reconstruct_values(basis, coords[order])
    layout = dataset.layout
    rows = []
    for rank, (i, approx_row) in enumerate(zip(order, approx), start=1):
        original = dataset.vectors[i]
        rows.append({
            "rank": rank,
            "id": dataset.ids[i],
            "score": float(scores[i]),
            "terms": (basis.singular_values * coords[i]).tolist(),
            "statics": {
                name: {
                    "original": float(original[layout.static_index(name)]),
                    "approximated": float(approx_row[layout.static_index(name)]),
                }
                for name in layout.static_names
            },
        })
    _logger.debug("コーナーケース %d 件を抽出しました", len(rows))
    return rows
