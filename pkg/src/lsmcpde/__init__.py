"""Hybrid regression/Fourier pricing of Bermudan options under stochastic volatility."""

from .exceptions import (
    ConfigurationError,
    DegenerateDesignError,
    LsmcPdeError,
    NumericError,
    ParameterError,
    SchemaError,
)
from .fst import GridSpec, ValueSurface, build_psi, conditional_expectation_over_interval, fst_step
from .model import (
    ExerciseSchedule,
    HestonSpec,
    MultiHestonSpec,
    PathBundle,
    heston_reference,
    multi_heston_reference,
    simulate_paths,
    theta_of_constant_path,
)
from .pricer import LSMCPDEPricer, OptionSpec, backward_induction, extract_boundary, low_estimate

__version__ = "0.1.0"
