from services.experiment_service import (
    calibrate_beta,
    compare_methods,
    generate_pipeline,
    iterate_d_beta,
    select_d,
)
from services.ot_service import empirical_wasserstein, sr_metric

__all__ = [
    "calibrate_beta",
    "compare_methods",
    "empirical_wasserstein",
    "generate_pipeline",
    "iterate_d_beta",
    "select_d",
    "sr_metric",
]
