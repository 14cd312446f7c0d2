from bytelab.labctl.config import DESK_CAVEAT, SCENARIOS, ExperimentConfig
from bytelab.labctl.scenarios import (
    ARCHES,
    Lab,
    ensemble_scaling,
    latency_report,
    run,
    sample_window_spec,
    utility_report,
)

__all__ = [
    "ARCHES",
    "DESK_CAVEAT",
    "ExperimentConfig",
    "Lab",
    "SCENARIOS",
    "ensemble_scaling",
    "latency_report",
    "run",
    "sample_window_spec",
    "utility_report",
]
