"""Covariant Gibbs states: specs, sampling, estimators and thermodynamics."""

from .estimate import Estimate, combine, estimate, estimate_values
from .gibbs import (
    MATTER,
    REGULATED,
    GibbsSpec,
    NotNormalizableError,
    check_normalizable,
    log_weight,
    matter_hamiltonian,
    matter_log_weight,
    spatial_log_weight,
)
from .sampler import SampleSet, SamplerConfig, sample

__all__ = [
    "Estimate",
    "GibbsSpec",
    "MATTER",
    "REGULATED",
    "NotNormalizableError",
    "SampleSet",
    "SamplerConfig",
    "check_normalizable",
    "combine",
    "estimate",
    "estimate_values",
    "log_weight",
    "matter_hamiltonian",
    "matter_log_weight",
    "sample",
    "spatial_log_weight",
]

from .stationarity import StationarityReport, observable_battery, stationarity_test  # noqa: E402
from .thermo import OverlapError, ThermoReport, thermo  # noqa: E402

__all__ += ["StationarityReport", "observable_battery", "stationarity_test", "OverlapError", "ThermoReport",
            "thermo"]
