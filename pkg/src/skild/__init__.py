"""Scale-invariant frequency-space diffusion toolkit.

Forward corruption in DCT space with spectrum-matched noise, exact posterior
reversal, SDE samplers, schedule and effective-resolution machinery, and a
critical-Ising benchmark with connected four-point correlators.
"""

__version__ = "0.1.0"
CONFIG_SCHEMA_VERSION = 1

from skild.errors import NumericalError, SkildError, ValidationError
from skild.spectral import FrequencyGrid, dct2, frequency_grid, idct2, radial_average
from skild.spectrum import (
    PowerLawParams,
    VarianceAccumulator,
    VarianceSpectrum,
    estimate_variance_spectrum,
    eval_power_law,
    fit_power_law,
)
from skild.schedule import (
    CoefficientTables,
    ScheduleSpec,
    build_tables,
    choose_start_timestep,
    effective_resolution,
    lambda_dot,
    lambda_of_t,
    snr,
)

__all__ = [
    "CONFIG_SCHEMA_VERSION",
    "CoefficientTables",
    "FrequencyGrid",
    "NumericalError",
    "PowerLawParams",
    "ScheduleSpec",
    "SkildError",
    "ValidationError",
    "VarianceAccumulator",
    "VarianceSpectrum",
    "build_tables",
    "choose_start_timestep",
    "dct2",
    "effective_resolution",
    "estimate_variance_spectrum",
    "eval_power_law",
    "fit_power_law",
    "frequency_grid",
    "idct2",
    "lambda_dot",
    "lambda_of_t",
    "radial_average",
    "snr",
]
