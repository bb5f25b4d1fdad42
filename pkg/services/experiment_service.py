"""
実験サービス
SVD + KDE によるシナリオパラメータ生成パイプラインと、SRメトリクスを使った
d の選択・β の較正・d/β の反復決定・生成手法の比較を行う。
乱数はすべて設定のシードから名前付きサブストリームで派生させる。
"""

import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import pearsonr

from services import kde_service
from services.baseline_service import (
    DURATION_COLUMN,
    fit_gaussian,
    fixed_parameter_matrix,
    resample_training,
    sample_gaussian,
    synth_fixed_dataset,
)
from services.config_service import get_settings, get_thread_limit
from services.errors import CorrelationDegenerate, NegativeDuration, NonConvergence
from services.ot_service import empirical_wasserstein, sr_from_triple
from services.scenario_service import (
    Dataset,
    WeightVector,
    compute_weights,
    split_dataset,
)
from services.svd_service import (
    ReducedBasis,
    fit_basis,
    reconstruct_dataset,
    truncate_basis,
)

_logger = logging.getLogger(__name__)

METHODS = (
    "svd+kde+dep",
    "svd+kde+indep",
    "svd+gauss+dep",
    "svd+gauss+indep",
    "fixed+kde+dep",
    "fixed+kde+indep",
    "fixed+gauss+dep",
    "fixed+gauss+indep",
    "resample",
)
RESAMPLE_KEY = "resample"
# 固定パラメータの抽出で継続時間が正になるまで引き直す回数の上限
MAX_REJECTION_ROUNDS = 100


@dataclass(frozen=True)
class ExperimentConfig:
    n_t: int = 50
    d: int = 4
    d_range: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    beta: float = 0.25
    p: float = 1.0
    n_w: int = 2000
    repeats: int = 50
    test_fraction: float = 0.2
    seed: int = 0
    method: str = "svd+kde+dep"
    beta_grid: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(21))
    n_large: int = 10000
    bootstrap_b: int = 1000
    interpolation: str = "cubic_spline"
    zero_variance_floor: bool = False
    svd_solver: str = "full"
    max_iterations: int = 10
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "d_range", tuple(sorted({int(d) for d in self.d_range})))
        object.__setattr__(self, "beta_grid", tuple(float(b) for b in self.beta_grid))
        if self.repeats < 1:
            raise ValueError(f"repeats は1以上が必要です: {self.repeats}")
        if not self.d_range or self.d_range[0] < 1:
            raise ValueError(f"d_range は1以上の整数の空でない集合が必要です: {self.d_range}")
        if self.d < 1:
            raise ValueError(f"d は1以上が必要です: {self.d}")
        if self.beta < 0 or any(b < 0 for b in self.beta_grid):
            raise ValueError("β は0以上が必要です")
        if not self.beta_grid:
            raise ValueError("beta_grid が空です")
        if self.p < 1:
            raise ValueError(f"p は1以上が必要です: {self.p}")
        if self.n_w < 1 or self.n_large < 1:
            raise ValueError("n_w と n_large は1以上が必要です")
        if not 0 < self.test_fraction < 1:
            raise ValueError(f"test_fraction は (0, 1) の範囲が必要です: {self.test_fraction}")
        if self.method not in METHODS:
            raise ValueError(f"未知の生成手法: {self.method}（{', '.join(METHODS)}）")
        if self.bootstrap_b < 100:
            raise ValueError(f"bootstrap_b は100以上が必要です: {self.bootstrap_b}")
        if self.threads < 1 or self.max_iterations < 1:
            raise ValueError("threads と max_iterations は1以上が必要です")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["d_range"] = list(self.d_range)
        data["beta_grid"] = list(self.beta_grid)
        return data


def build_experiment_config(**overrides) -> ExperimentConfig:
    """
    設定ファイル・環境変数・明示指定（None は無視）から実験設定を作る。
    明示指定 > SCENREP_THREADS > settings.json > デフォルトの順に優先。
    """
    settings = get_settings()
    values = {key: settings[key] for key in ExperimentConfig.__dataclass_fields__ if key in settings}
    values["threads"] = get_thread_limit()
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def substream(seed: int, *names) -> np.random.Generator:
    """シードと名前の列から独立した乱数生成器を派生させる（実行順序に依存しない）。"""
    key = tuple(zlib.crc32(str(name).encode("utf-8")) for name in names)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def _map_repeats(fn, repeats: int, threads: int) -> list:
    """繰り返し番号 0..repeats−1 に fn を適用し、番号順の結果を返す。"""
    if threads <= 1 or repeats == 1:
        return [fn(r) for r in range(repeats)]
    with ThreadPoolExecutor(max_workers=min(threads, repeats)) as pool:
        return list(pool.map(fn, range(repeats)))


# ---------- 生成パイプライン ----------

@dataclass(frozen=True)
class PipelineModel:
    """当てはめ済みの SVD 基底と KDE。"""

    basis: ReducedBasis
    kde: kde_service.KdeModel

    def generate(self, n: int, rng=None) -> Dataset:
        coords = kde_service.sample(self.kde, n, rng)
        return reconstruct_dataset(self.basis, coords)

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "kde": self.kde.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineModel":
        return cls(ReducedBasis.from_dict(data["basis"]), kde_service.KdeModel.from_dict(data["kde"]))


def fit_pipeline(
    train: Dataset,
    d: int,
    weights: WeightVector | None = None,
    solver: str = "full",
    bandwidth: float | None = None,
    floor_zero_variance: bool = False,
) -> PipelineModel:
    """学習データに SVD 基底と削減座標の KDE を当てはめる。"""
    if weights is None:
        weights = compute_weights(train, floor_zero_variance=floor_zero_variance)
    basis, coords = fit_basis(train, weights, d, solver)
    return PipelineModel(basis, kde_service.fit_kde(coords, bandwidth))


def generate_pipeline(
    train: Dataset,
    d: int,
    n_w: int,
    rng=None,
    weights: WeightVector | None = None,
    solver: str = "full",
    bandwidth: float | None = None,
) -> Dataset:
    """
    SVD 基底 → 削減座標の KDE → N_w 点の抽出 → 基底の線形結合で元の次元へ戻す。

    Args:
        train: 学習データ
        d: 削減次元数
        n_w: 生成件数（1以上）
        rng: シードまたは numpy Generator
        weights: 重みα（省略時は学習データから計算）
        solver: SVD ソルバー
        bandwidth: KDE バンド幅（省略時は LOO で選択）

    Returns:
        生成データセット W
    """
    if n_w < 1:
        raise ValueError(f"生成件数は1以上が必要です: {n_w}")
    model = fit_pipeline(train, d, weights, solver, bandwidth)
    return model.generate(n_w, rng)


def _sample_density(points: np.ndarray, family: str, dependent: bool, n: int, rng) -> np.ndarray:
    if family == "kde":
        if dependent:
            return kde_service.sample(kde_service.fit_kde(points), n, rng)
        return kde_service.sample_independent(kde_service.fit_independent_kde(points), n, rng)
    return sample_gaussian(fit_gaussian(points, independent=not dependent), n, rng)


def _sample_fixed(train: Dataset, family: str, dependent: bool, n: int, rng) -> Dataset:
    params = fixed_parameter_matrix(train)
    scale = params.std(axis=0)
    scale[scale <= 0] = 1.0
    scaled = params / scale
    kept: list[np.ndarray] = []
    remaining = n
    for _ in range(MAX_REJECTION_ROUNDS):
        draws = _sample_density(scaled, family, dependent, remaining, rng) * scale
        valid = draws[draws[:, DURATION_COLUMN] > 0]
        kept.append(valid)
        remaining -= valid.shape[0]
        if remaining <= 0:
            break
    else:
        raise NegativeDuration(0.0)
    return synth_fixed_dataset(np.vstack(kept)[:n], train.layout)


def generate_with_method(
    method: str,
    train: Dataset,
    weights: WeightVector,
    d: int,
    n_w: int,
    rng=None,
    solver: str = "full",
) -> Dataset:
    """
    比較手法のセレクタ文字列で生成する。

    'svd+{kde,gauss}+{dep,indep}'、'fixed+{kde,gauss}+{dep,indep}'、'resample'。
    fixed 系の継続時間が正でない抽出値は引き直す。
    """
    if method not in METHODS:
        raise ValueError(f"未知の生成手法: {method}（{', '.join(METHODS)}）")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if method == RESAMPLE_KEY:
        return resample_training(train, n_w, gen)
    parameterization, family, dependency = method.split("+")
    dependent = dependency == "dep"
    if parameterization == "fixed":
        return _sample_fixed(train, family, dependent, n_w, gen)
    basis, coords = fit_basis(train, weights, d, solver)
    return reconstruct_dataset(basis, _sample_density(coords, family, dependent, n_w, gen))


# ---------- 集計 ----------

def bootstrap_median_std(values, b: int = 1000, rng=None) -> float:
    """
    中央値の標準偏差をブートストラップで推定する（B 回の復元抽出の中央値の標準偏差）。
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("値がありません")
    if b < 100:
        raise ValueError(f"B は100以上が必要です: {b}")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    idx = gen.integers(0, values.size, size=(b, values.size))
    return float(np.median(values[idx], axis=1).std())


@dataclass(frozen=True)
class RunTriple:
    """1回の分割・1つの生成方法での (Ŵ(Z,W), Ŵ(X,W))。w_large は較正実験のみ。"""

    repeat: int
    key: str
    w_test: float
    w_train: float
    w_large: float | None = None

    def sr(self, beta: float) -> float:
        return sr_from_triple(self.w_test, self.w_train, beta)

    def to_dict(self, beta: float | None = None) -> dict:
        data = {"repeat": self.repeat, "key": self.key, "w_test": self.w_test, "w_train": self.w_train}
        if self.w_large is not None:
            data["w_large"] = self.w_large
        if beta is not None:
            data["sr"] = self.sr(beta)
        return data


@dataclass(frozen=True)
class CurvePoint:
    key: str
    median_sr: float
    median_w_test: float
    median_penalty: float
    std_sr: float
    std_w_test: float
    std_penalty: float
    median_w_large: float | None = None

    def to_dict(self) -> dict:
        data = asdict(self)
        if self.median_w_large is None:
            data.pop("median_w_large")
        return data


def _summarize(runs: list[RunTriple], key: str, beta: float, config: ExperimentConfig) -> CurvePoint:
    selected = sorted((t for t in runs if t.key == key), key=lambda t: t.repeat)
    w_test = np.array([t.w_test for t in selected])
    w_train = np.array([t.w_train for t in selected])
    sr = w_test + beta * (w_test - w_train)
    penalty = w_test - w_train
    b = config.bootstrap_b
    large = [t.w_large for t in selected if t.w_large is not None]
    return CurvePoint(
        key=key,
        median_sr=float(np.median(sr)),
        median_w_test=float(np.median(w_test)),
        median_penalty=float(np.median(penalty)),
        std_sr=bootstrap_median_std(sr, b, substream(config.seed, "bootstrap", key, "sr")),
        std_w_test=bootstrap_median_std(w_test, b, substream(config.seed, "bootstrap", key, "w_test")),
        std_penalty=bootstrap_median_std(penalty, b, substream(config.seed, "bootstrap", key, "penalty")),
        median_w_large=float(np.median(large)) if large else None,
    )


def _keys_in_order(runs: list[RunTriple]) -> list[str]:
    keys: list[str] = []
    for t in runs:
        if t.key not in keys:
            keys.append(t.key)
    return keys


# ---------- d の選択 ----------

@dataclass(frozen=True)
class SelectionCurve:
    """d ごと（と学習データ復元抽出）の中央値曲線と最適 d。"""

    beta: float
    points: tuple[CurvePoint, ...]
    argmin: int
    runs: tuple[RunTriple, ...] = field(repr=False)

    def point(self, key) -> CurvePoint:
        for pt in self.points:
            if pt.key == str(key):
                return pt
        raise KeyError(key)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "argmin_d": self.argmin,
            "points": [pt.to_dict() for pt in self.points],
            "runs": [t.to_dict(self.beta) for t in self.runs],
        }


def _selection_repeat(full: Dataset, config: ExperimentConfig, r: int) -> list[RunTriple]:
    train, test = split_dataset(full, config.test_fraction, substream(config.seed, "split", r))
    weights = compute_weights(train, floor_zero_variance=config.zero_variance_floor)
    basis, coords = fit_basis(train, weights, max(config.d_range), config.svd_solver)
    triples = []

    def record(key: str, generated: Dataset) -> None:
        w_test, _ = empirical_wasserstein(test, generated, weights, config.p)
        w_train, _ = empirical_wasserstein(train, generated, weights, config.p)
        triples.append(RunTriple(r, key, w_test, w_train))

    record(RESAMPLE_KEY, resample_training(train, config.n_w, substream(config.seed, "resample", r)))
    for d in config.d_range:
        rng = substream(config.seed, "generate", r, d)
        kde = kde_service.fit_kde(coords[:, :d])
        record(str(d), reconstruct_dataset(truncate_basis(basis, d), kde_service.sample(kde, config.n_w, rng)))
    _logger.info("d選択: 繰り返し %d/%d が完了しました", r + 1, config.repeats)
    return triples


def run_selection(full: Dataset, config: ExperimentConfig) -> list[RunTriple]:
    """全繰り返しの (w_test, w_train) を計算する。β に依存しないので再集計に使える。"""
    per_repeat = _map_repeats(lambda r: _selection_repeat(full, config, r), config.repeats, config.threads)
    return [t for triples in per_repeat for t in triples]


def summarize_selection(runs: list[RunTriple], beta: float, config: ExperimentConfig) -> SelectionCurve:
    """
    保存済みの三つ組から β での中央値曲線を作る。
    最適 d は中央値 sr の最小値 + その標準偏差以内に入る最小の d。
    """
    points = tuple(_summarize(runs, key, beta, config) for key in _keys_in_order(runs))
    candidates = [pt for pt in points if pt.key != RESAMPLE_KEY]
    best = min(candidates, key=lambda pt: (pt.median_sr, int(pt.key)))
    threshold = best.median_sr + best.std_sr
    argmin = min(int(pt.key) for pt in candidates if pt.median_sr <= threshold)
    return SelectionCurve(beta, points, argmin, tuple(runs))


def select_d(full: Dataset, config: ExperimentConfig, beta: float | None = None) -> SelectionCurve:
    """
    分割を repeats 回引き直して d ごとの SR メトリクスの中央値を求め、最適 d を返す。
    曲線の先頭は学習データの復元抽出（比較基準）。
    """
    beta = config.beta if beta is None else beta
    curve = summarize_selection(run_selection(full, config), beta, config)
    _logger.info("d選択: β=%.3g で最適 d=%d", beta, curve.argmin)
    return curve


# ---------- β の較正 ----------

@dataclass(frozen=True)
class CorrelationCurve:
    """β ごとの相関（SR メトリクスの中央値 vs 大規模テスト集合への Ŵ の中央値）。"""

    d: int
    betas: tuple[float, ...]
    correlations: tuple[float, ...]
    argmax_beta: float
    max_correlation: float
    points: tuple[CurvePoint, ...]
    runs: tuple[RunTriple, ...] = field(repr=False)

    def correlation_at(self, beta: float) -> float:
        return self.correlations[self.betas.index(beta)]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "argmax_beta": self.argmax_beta,
            "max_correlation": self.max_correlation,
            "curve": [{"beta": b, "correlation": c} for b, c in zip(self.betas, self.correlations)],
            "points": [pt.to_dict() for pt in self.points],
            "runs": [t.to_dict() for t in self.runs],
        }


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        raise CorrelationDegenerate("中央値系列が定数のため相関を計算できません")
    return float(pearsonr(x, y)[0])


def calibrate_beta(
    full: Dataset,
    d: int,
    config: ExperimentConfig,
    beta_grid=None,
    truth=None,
) -> CorrelationCurve:
    """
    代理の真の分布で SR メトリクスと「真の」Wasserstein 距離の相関を β ごとに求める。

    1. 全データに d 次元パイプラインを当てはめて代理の真の分布とする（truth で差し替え可）
    2. 繰り返しごとに X*, Z* を真の分布から抽出し、Z*_large（n_large 件）は1回だけ抽出
    3. 復元抽出と d_range の各パイプラインで W* を生成し Ŵ(Z*,W*), Ŵ(X*,W*), Ŵ(Z*_large,W*) を計算
    4. β ごとに各生成方法の SR 中央値と Ŵ(Z*_large,·) 中央値の Pearson 相関を計算

    Args:
        full: 全データ
        d: 代理の真の分布の次元数
        config: 実験設定
        beta_grid: β の候補（省略時は設定の beta_grid）
        truth: (n, rng) → Dataset の真の分布サンプラー（省略時は代理パイプライン）
    """
    betas = tuple(float(b) for b in (config.beta_grid if beta_grid is None else beta_grid))
    if not betas:
        raise ValueError("β の候補が空です")
    if truth is None:
        surrogate = fit_pipeline(full, d, solver=config.svd_solver, floor_zero_variance=config.zero_variance_floor)
        truth = surrogate.generate
    n_test = int(math.floor(config.test_fraction * len(full) + 0.5))
    n_train = len(full) - n_test
    large = truth(config.n_large, substream(config.seed, "truth", "large"))

    def one_repeat(r: int) -> list[RunTriple]:
        x_star = truth(n_train, substream(config.seed, "truth", "train", r))
        z_star = truth(n_test, substream(config.seed, "truth", "test", r))
        weights = compute_weights(x_star, floor_zero_variance=config.zero_variance_floor)
        basis, coords = fit_basis(x_star, weights, max(config.d_range), config.svd_solver)
        triples = []

        def record(key: str, generated: Dataset) -> None:
            w_test, _ = empirical_wasserstein(z_star, generated, weights, config.p)
            w_train, _ = empirical_wasserstein(x_star, generated, weights, config.p)
            w_large, _ = empirical_wasserstein(large, generated, weights, config.p)
            triples.append(RunTriple(r, key, w_test, w_train, w_large))

        record(RESAMPLE_KEY, resample_training(x_star, config.n_w, substream(config.seed, "calibrate", "resample", r)))
        for dd in config.d_range:
            kde = kde_service.fit_kde(coords[:, :dd])
            sampled = kde_service.sample(kde, config.n_w, substream(config.seed, "calibrate", "generate", r, dd))
            record(str(dd), reconstruct_dataset(truncate_basis(basis, dd), sampled))
        _logger.info("β較正: 繰り返し %d/%d が完了しました", r + 1, config.repeats)
        return triples

    runs = [t for triples in _map_repeats(one_repeat, config.repeats, config.threads) for t in triples]
    keys = _keys_in_order(runs)
    large_medians = np.array([np.median([t.w_large for t in runs if t.key == k]) for k in keys])
    correlations = []
    for beta in betas:
        sr_medians = np.array([np.median([t.sr(beta) for t in runs if t.key == k]) for k in keys])
        correlations.append(_pearson(sr_medians, large_medians))
    best = int(np.argmax(correlations))
    points = tuple(_summarize(runs, k, config.beta, config) for k in keys)
    _logger.info("β較正: d=%d で最大相関 %.4f（β=%.3g）", d, correlations[best], betas[best])
    return CorrelationCurve(
        d=d,
        betas=betas,
        correlations=tuple(correlations),
        argmax_beta=betas[best],
        max_correlation=correlations[best],
        points=points,
        runs=tuple(runs),
    )


# ---------- d と β の反復決定 ----------

@dataclass(frozen=True)
class IterationResult:
    d: int
    beta: float
    trace: tuple[tuple[int, float], ...]
    selection: SelectionCurve
    calibration: CorrelationCurve | None

    @property
    def d_selections(self) -> int:
        return len(self.trace)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "beta": self.beta,
            "trace": [{"d": d, "beta": b} for d, b in self.trace],
            "selection": self.selection.to_dict(),
            "calibration": self.calibration.to_dict() if self.calibration else None,
        }


def iterate_d_beta(full: Dataset, beta0: float, config: ExperimentConfig) -> IterationResult:
    """
    d と β を交互に決める。β_0 で d_0 を選び、d_i の代理分布で β_{i+1} を較正して
    d_{i+1} を選び直し、d が変わらなくなったら終了する。

    Raises:
        NonConvergence: max_iterations 回以内に d が安定しない場合（(d_i, β_i) の履歴付き）
    """
    if not beta0 > 0:
        raise ValueError(f"β_0 は正が必要です: {beta0}")
    runs = run_selection(full, config)
    beta = beta0
    selection = summarize_selection(runs, beta, config)
    d = selection.argmin
    trace = [(d, beta)]
    calibration = None
    for _ in range(config.max_iterations):
        try:
            calibration = calibrate_beta(full, d, config)
            beta = calibration.argmax_beta
        except CorrelationDegenerate as e:
            _logger.warning("β を較正できないため β=%.3g のまま続行します: %s", beta, e)
        selection = summarize_selection(runs, beta, config)
        next_d = selection.argmin
        trace.append((next_d, beta))
        if next_d == d:
            _logger.info("d/β 反復が収束しました: d=%d, β=%.3g", d, beta)
            return IterationResult(d, beta, tuple(trace), selection, calibration)
        d = next_d
    raise NonConvergence(trace)


# ---------- 手法比較 ----------

@dataclass(frozen=True)
class ComparisonResult:
    beta: float
    points: tuple[CurvePoint, ...]
    ranking: tuple[str, ...]
    runs: tuple[RunTriple, ...] = field(repr=False)

    def point(self, method: str) -> CurvePoint:
        for pt in self.points:
            if pt.key == method:
                return pt
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "ranking": list(self.ranking),
            "points": [pt.to_dict() for pt in self.points],
            "runs": [t.to_dict(self.beta) for t in self.runs],
        }


def compare_methods(full: Dataset, config: ExperimentConfig, methods=METHODS) -> ComparisonResult:
    """
    各生成手法を同じ分割で評価し、SR メトリクスの中央値で順位付けする（小さいほど良い）。
    """
    methods = tuple(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"未知の生成手法: {unknown}")

    def one_repeat(r: int) -> list[RunTriple]:
        train, test = split_dataset(full, config.test_fraction, substream(config.seed, "split", r))
        weights = compute_weights(train, floor_zero_variance=config.zero_variance_floor)
        triples = []
        for method in methods:
            generated = generate_with_method(
                method, train, weights, config.d, config.n_w,
                substream(config.seed, "compare", method, r), config.svd_solver,
            )
            w_test, _ = empirical_wasserstein(test, generated, weights, config.p)
            w_train, _ = empirical_wasserstein(train, generated, weights, config.p)
            triples.append(RunTriple(r, method, w_test, w_train))
        _logger.info("手法比較: 繰り返し %d/%d が完了しました", r + 1, config.repeats)
        return triples

    runs = [t for triples in _map_repeats(one_repeat, config.repeats, config.threads) for t in triples]
    points = tuple(_summarize(runs, m, config.beta, config) for m in methods)
    ranking = tuple(pt.key for pt in sorted(points, key=lambda pt: (pt.median_sr, methods.index(pt.key))))
    return ComparisonResult(config.beta, points, ranking, tuple(runs))
