"""Monte Carlo orchestration: configs, seed derivation, reports and the
experiment drivers."""

from ..seeding import derive_seed, make_stream
from .config import ExperimentConfig, load_config, parse_n_grid
from .reports import (
    DistReport,
    PerN,
    RateReport,
    SlopeFit,
    aggregate_per_n,
    build_rate_report,
    fit_loglog_slope,
    read_raw_csv,
    replicate_matrix,
    summarize_distribution,
    write_json_report,
    write_raw_csv,
)
from .runners import (
    ExperimentResult,
    run_dichotomy_experiment,
    run_experiment,
    run_gmc_experiment,
    run_oscillation_experiment,
    run_rate_experiment,
    run_trimmed_clt_experiment,
)

__all__ = [
    "DistReport",
    "ExperimentConfig",
    "ExperimentResult",
    "PerN",
    "RateReport",
    "SlopeFit",
    "aggregate_per_n",
    "build_rate_report",
    "derive_seed",
    "fit_loglog_slope",
    "load_config",
    "make_stream",
    "parse_n_grid",
    "read_raw_csv",
    "replicate_matrix",
    "run_dichotomy_experiment",
    "run_experiment",
    "run_gmc_experiment",
    "run_oscillation_experiment",
    "run_rate_experiment",
    "run_trimmed_clt_experiment",
    "summarize_distribution",
    "write_json_report",
    "write_raw_csv",
]
