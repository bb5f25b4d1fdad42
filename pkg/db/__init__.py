from db.artifact_store import (
    write_dataset,
    write_json,
    write_metric_report,
    write_model,
    write_plan,
    write_report,
    write_rows,
    write_scenarios,
)

__all__ = [
    "write_dataset",
    "write_json",
    "write_metric_report",
    "write_model",
    "write_plan",
    "write_report",
    "write_rows",
    "write_scenarios",
]
