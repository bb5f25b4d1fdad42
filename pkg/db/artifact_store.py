"""
成果物の保存モジュール
シナリオ（JSON Lines）、データセット（CSV / JSON）、モデル・レポート（JSON）、
輸送計画と曲線（CSV）をファイルに書き出す。
同じ入力からは常にバイト単位で同一のファイルを書く（浮動小数は repr で17桁相当を保持）。
"""

import csv
import json
from pathlib import Path

from services.ot_service import MetricReport, TransportPlan
from services.scenario_service import Dataset, Scenario

OUTPUT_FORMATS = ("csv", "json")


def _prepare(file_path) -> Path:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _check_format(fmt: str) -> None:
    if fmt not in OUTPUT_FORMATS:
        raise ValueError(f"未対応の出力形式: {fmt}（csv・json に対応）")


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "id": scenario.id,
        "t0": scenario.t0,
        "t1": scenario.t1,
        "category": scenario.category.value,
        "signals": {name: samples.tolist() for name, samples in scenario.signals.items()},
        "statics": dict(scenario.statics),
        "units": dict(scenario.units),
    }


def write_json(file_path, data) -> Path:
    path = _prepare(file_path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, ensure_ascii=False, indent=2)
        f.write("\n")
    return path


def write_scenarios(file_path, scenarios: list[Scenario]) -> Path:
    """1行1シナリオの JSON Lines で保存する。"""
    path = _prepare(file_path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sc in scenarios:
            f.write(json.dumps(scenario_to_dict(sc), ensure_ascii=False))
            f.write("\n")
    return path


def write_rows(file_path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """辞書のリストを CSV に書く。列はcolumns、省略時は先頭行のキー順。"""
    path = _prepare(file_path)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    return path


def write_dataset(file_path, dataset: Dataset, fmt: str = "csv") -> Path:
    """
    データセットを保存する。

    csv: 先頭列 id、続いて sig.<名前>.<k> と static.<名前> の列
    json: {"layout", "ids", "vectors"}
    """
    _check_format(fmt)
    if fmt == "json":
        return write_json(file_path, {
            "layout": dataset.layout.to_dict(),
            "ids": list(dataset.ids),
            "vectors": dataset.vectors.tolist(),
        })
    path = _prepare(file_path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", *dataset.layout.column_names()])
        for scenario_id, row in zip(dataset.ids, dataset.vectors.tolist()):
            writer.writerow([scenario_id, *(repr(v) for v in row)])
    return path


def write_model(file_path, model) -> Path:
    """to_dict() を持つモデル（基底 + KDE など）を JSON で保存する。"""
    return write_json(file_path, model.to_dict())


def write_plan(file_path, plan: TransportPlan) -> Path:
    """輸送計画を (i, j, mass) の CSV で保存する。"""
    rows = [{"i": i, "j": j, "mass": repr(m)} for i, j, m in plan.triples()]
    return write_rows(file_path, rows, ["i", "j", "mass"])


def write_metric_report(file_path, report: MetricReport, fmt: str = "json", extra: dict | None = None) -> Path:
    _check_format(fmt)
    data = {**(extra or {}), **report.to_dict()}
    if fmt == "json":
        return write_json(file_path, data)
    flat = {k: v for k, v in data.items() if not isinstance(v, (dict, list))}
    return write_rows(file_path, [flat])


def write_report(file_path, data: dict, fmt: str = "json", table_key: str = "points") -> Path:
    """
    実験レポートを保存する。json はそのまま、csv は data[table_key] の表だけを書く。
    """
    _check_format(fmt)
    if fmt == "json":
        return write_json(file_path, data)
    return write_rows(file_path, list(data.get(table_key, [])))
