"""
例外定義
シナリオ生成・代表性評価で発生するドメインエラーをまとめる。
すべて ValueError 派生なので、呼び出し側は従来通り ValueError で捕捉できる。
"""


class ScenarioRepError(ValueError):
    """ドメインエラーの基底クラス。code はCLIの診断行に使う。"""

    code = "scenario_rep_error"


class InputFormatError(ScenarioRepError):
    code = "input_format"


class EmptySignal(ScenarioRepError):
    code = "empty_signal"

    def __init__(self, signal: str, count: int):
        self.signal = signal
        super().__init__(f"信号 '{signal}' のサンプル数が不足しています（{count}点、2点以上必要）")


class NonMonotonicTimestamps(ScenarioRepError):
    code = "non_monotonic_timestamps"

    def __init__(self, signal: str):
        self.signal = signal
        super().__init__(f"信号 '{signal}' のタイムスタンプが狭義単調増加ではありません")


class InsufficientSamplesForSpline(ScenarioRepError):
    code = "insufficient_samples_for_spline"

    def __init__(self, signal: str, count: int):
        self.signal = signal
        super().__init__(
            f"信号 '{signal}' はスプライン補間に4点以上必要です（{count}点）"
        )


class MissingStatic(ScenarioRepError):
    code = "missing_static"

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"静的パラメータ '{name}' がありません")


class ZeroVariance(ScenarioRepError):
    code = "zero_variance"

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"パラメータ {index} の標準偏差が0です")


class DegenerateSplit(ScenarioRepError):
    code = "degenerate_split"


class DTooLarge(ScenarioRepError):
    code = "d_too_large"

    def __init__(self, d: int, limit: int):
        self.d = d
        self.limit = limit
        super().__init__(f"d={d} が上限 min(n_x, N_x)={limit} を超えています")


class ZeroSingularValue(ScenarioRepError):
    code = "zero_singular_value"

    def __init__(self, j: int):
        self.j = j
        super().__init__(f"特異値 σ_{j} が0のため射影できません")


class LayoutMismatch(ScenarioRepError):
    code = "layout_mismatch"


class SolverNonConvergence(ScenarioRepError):
    code = "solver_non_convergence"


class AllPointsIdentical(ScenarioRepError):
    code = "all_points_identical"

    def __init__(self):
        super().__init__("全ての点が同一のためバンド幅を選択できません")


class NegativeDuration(ScenarioRepError):
    code = "negative_duration"

    def __init__(self, duration: float):
        self.duration = duration
        super().__init__(f"継続時間が正ではありません: {duration}")


class SingularCovariance(ScenarioRepError):
    code = "singular_covariance"


class CorrelationDegenerate(ScenarioRepError):
    code = "correlation_degenerate"


class NonConvergence(ScenarioRepError):
    code = "non_convergence"

    def __init__(self, trace: list[tuple[int, float]]):
        self.trace = list(trace)
        steps = ", ".join(f"(d={d}, β={b:g})" for d, b in self.trace)
        super().__init__(f"d/β の反復が収束しませんでした: {steps}")
