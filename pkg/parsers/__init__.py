from .scenario_parser import read_dataset, read_model, read_scenarios

__all__ = ["read_dataset", "read_model", "read_scenarios"]
