"""Finite-volume simulation and diagnostics for aggregation-diffusion equations

    u_t + div(u grad c) = Laplace A(u),   c = K * u  or  -div(a grad c) + gamma c = u.
"""

from .chemo import Coefficient, ConvolutionChemo, EllipticChemo, solve_elliptic
from .config import RunConfig, dump_config, load_config, parse_config
from .diagnostics import (
    DiagnosticsRecord,
    entropy_lower_bound_check,
    free_energy,
    gns_probe,
    log_hls_probe,
    modified_free_energy,
    modified_free_energy_at,
    self_similar_transform,
    virial_rate,
)
from .diffusion import (
    Criticality,
    Linear,
    PorousMedium,
    classify,
    critical_mass,
    entropy_density,
    parse_diffusion,
    regularize,
)
from .experiments import critical_mass_sweep, decay_rate, selfsim_boundedness, smalldata_probe, virial_check
from .grid import GridSpec, ScalarField, VectorField, gaussian_field, integrate, lp_norm, second_moment
from .integrator import BlowupSuspected, BoundaryOverflow, SimState, StepperConfig, run, step
from .kernels import Logarithmic, Newtonian, PowerLaw, TabulatedRadial, critical_exponent, mollify, parse_kernel

__version__ = "0.1.0"

__all__ = [
    "BlowupSuspected", "BoundaryOverflow", "Coefficient", "ConvolutionChemo", "Criticality",
    "DiagnosticsRecord", "EllipticChemo", "GridSpec", "Linear", "Logarithmic", "Newtonian",
    "PorousMedium", "PowerLaw", "RunConfig", "ScalarField", "SimState", "StepperConfig",
    "TabulatedRadial", "VectorField", "classify", "critical_exponent", "critical_mass",
    "critical_mass_sweep", "decay_rate", "dump_config", "entropy_density",
    "entropy_lower_bound_check", "free_energy", "gaussian_field", "gns_probe", "integrate",
    "load_config", "log_hls_probe", "lp_norm", "modified_free_energy", "modified_free_energy_at", "mollify",
    "parse_config", "parse_diffusion", "parse_kernel", "regularize", "run",
    "second_moment", "self_similar_transform", "selfsim_boundedness", "smalldata_probe",
    "solve_elliptic", "step", "virial_check", "virial_rate",
]
