"""
シナリオ・データセット・モデルのパーサー
シナリオの JSON Lines、データセットの CSV / JSON、当てはめ済みモデルの JSON を読み込む。
形式の誤りは InputFormatError にまとめる。
"""

import csv
import json
import math
from pathlib import Path

from services.errors import InputFormatError
from services.experiment_service import PipelineModel
from services.scenario_service import Dataset, ParameterLayout, Scenario, ScenarioCategory

SCENARIO_KEYS = ("id", "t0", "t1", "signals", "statics")


def _require_file(file_path) -> Path:
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"ファイルが見つかりません: {file_path}")
    return path


def parse_scenario(obj: dict, line_no: int | None = None) -> Scenario:
    """1件分の辞書を Scenario にする。"""
    where = f"{line_no}行目: " if line_no is not None else ""
    if not isinstance(obj, dict):
        raise InputFormatError(f"{where}シナリオはJSONオブジェクトである必要があります")
    missing = [k for k in SCENARIO_KEYS if k not in obj]
    if missing:
        raise InputFormatError(f"{where}必須キーがありません: {missing}")
    try:
        signals = {str(name): [(float(t), float(v)) for t, v in samples] for name, samples in obj["signals"].items()}
        statics = {str(name): float(v) for name, v in obj["statics"].items()}
        category = ScenarioCategory(obj.get("category", ScenarioCategory.CUSTOM.value))
        t0, t1 = float(obj["t0"]), float(obj["t1"])
    except (TypeError, ValueError, AttributeError) as e:
        raise InputFormatError(f"{where}シナリオの値を解釈できません: {e}") from e
    for name, samples in signals.items():
        if any(t < t0 or t > t1 for t, _ in samples):
            raise InputFormatError(f"{where}信号 '{name}' の時刻が [t0, t1] の範囲外です")
    return Scenario(
        id=str(obj["id"]),
        t0=t0,
        t1=t1,
        signals=signals,
        statics=statics,
        category=category,
        units=obj.get("units", {}),
    )


def read_scenarios(file_path) -> list[Scenario]:
    """
    シナリオファイルを読み込む。

    Args:
        file_path: .jsonl（1行1シナリオ）または .json（シナリオの配列）

    Returns:
        Scenario のリスト（ファイル順）
    """
    path = _require_file(file_path)
    ext = path.suffix.lower()
    with open(path, "r", encoding="utf-8") as f:
        try:
            if ext == ".json":
                items = json.load(f)
                if not isinstance(items, list):
                    raise InputFormatError("シナリオJSONは配列である必要があります")
                return [parse_scenario(obj, i + 1) for i, obj in enumerate(items)]
            if ext in (".jsonl", ".ndjson"):
                scenarios = []
                for i, line in enumerate(f, start=1):
                    if line.strip():
                        scenarios.append(parse_scenario(json.loads(line), i))
                return scenarios
        except json.JSONDecodeError as e:
            raise InputFormatError(f"JSONを解釈できません（{path.name}）: {e}") from e
    raise ValueError(f"未対応のファイル形式: {ext}（JSONL・JSONに対応）")


def layout_from_columns(columns: list[str]) -> ParameterLayout:
    """
    CSV ヘッダ（sig.<名前>.<k>, static.<名前>）からレイアウトを復元する。
    列の並びが時刻順の規約と一致しない場合は InputFormatError。
    """
    signal_names: list[str] = []
    static_names: list[str] = []
    max_k = -1
    for col in columns:
        if col.startswith("sig."):
            name, _, k = col[len("sig."):].rpartition(".")
            if not name or not k.isdigit():
                raise InputFormatError(f"列名を解釈できません: {col}")
            if name not in signal_names:
                signal_names.append(name)
            max_k = max(max_k, int(k))
        elif col.startswith("static."):
            static_names.append(col[len("static."):])
        else:
            raise InputFormatError(f"列名を解釈できません: {col}")
    n_t = max_k + 1 if signal_names else 2
    layout = ParameterLayout(n_t, tuple(signal_names), tuple(static_names))
    if layout.column_names() != list(columns):
        raise InputFormatError("列の並びがパラメータベクトルの規約（時刻ごとに全信号 → 静的パラメータ）と一致しません")
    return layout


def _read_dataset_csv(path: Path) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise InputFormatError(f"CSVが空です: {path.name}")
        if not header or header[0] != "id":
            raise InputFormatError("CSVの先頭列は id である必要があります")
        layout = layout_from_columns(header[1:])
        ids, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputFormatError(f"{line_no}行目: 列数 {len(row)} がヘッダ {len(header)} と一致しません")
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as e:
                raise InputFormatError(f"{line_no}行目: 数値を解釈できません: {e}") from e
            if not all(math.isfinite(v) for v in values):
                raise InputFormatError(f"{line_no}行目: 有限でない値があります")
            ids.append(row[0])
            rows.append(values)
    if not rows:
        raise InputFormatError(f"データ行がありません: {path.name}")
    return Dataset(rows, tuple(ids), layout)


def _read_dataset_json(path: Path) -> Dataset:
    data = _load_json(path)
    try:
        layout = ParameterLayout.from_dict(data["layout"])
        return Dataset(data["vectors"], tuple(data["ids"]), layout)
    except (KeyError, TypeError) as e:
        raise InputFormatError(f"データセットJSONの形式が正しくありません: {e}") from e


def read_dataset(file_path) -> Dataset:
    """データセットを読み込む（.csv: id + 列名ヘッダ、.json: {layout, ids, vectors}）。"""
    path = _require_file(file_path)
    ext = path.suffix.lower()
    if ext == ".csv":
        return _read_dataset_csv(path)
    if ext == ".json":
        return _read_dataset_json(path)
    raise ValueError(f"未対応のファイル形式: {ext}（CSV・JSONに対応）")


def _load_json(path: Path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise InputFormatError(f"JSONを解釈できません（{path.name}）: {e}") from e


def read_model(file_path) -> PipelineModel:
    """fit で保存した基底 + KDE のモデルJSONを読み込む。"""
    path = _require_file(file_path)
    data = _load_json(path)
    try:
        return PipelineModel.from_dict(data)
    except (KeyError, TypeError) as e:
        raise InputFormatError(f"モデルJSONの形式が正しくありません: {e}") from e
