"""Distributed regression imputation for the mean of a response missing at random."""

__version__ = "0.1.0"

from .cluster import Cluster, CommLedger, ShardedDataset, partition_even  # noqa: E402
from .estimators import (  # noqa: E402
    EstimateReport,
    classical_kernel_mu,
    classical_sieve_mu,
    complete_case,
    kdi_estimate,
    oracle_mean,
    sdi_estimate,
    sgm_estimate,
)
from .numkernel import KernelSpec, default_bandwidth  # noqa: E402
from .records import DataError, Sample  # noqa: E402
from .sieve import SieveBasisSpec  # noqa: E402
from .simgen import ScenarioSpec, gen_scenario  # noqa: E402

__all__ = [
    "Cluster",
    "CommLedger",
    "DataError",
    "EstimateReport",
    "KernelSpec",
    "Sample",
    "ScenarioSpec",
    "ShardedDataset",
    "SieveBasisSpec",
    "classical_kernel_mu",
    "classical_sieve_mu",
    "complete_case",
    "default_bandwidth",
    "gen_scenario",
    "kdi_estimate",
    "oracle_mean",
    "partition_even",
    "sdi_estimate",
    "sgm_estimate",
]
