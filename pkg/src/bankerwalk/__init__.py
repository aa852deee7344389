"""Banker walk in a Markovian environment: homogenized limit, reflected diffusion, deadlock regimes."""
__version__ = "0.1.0"

from .env import EnvSpec, ergodicity_certificate, stationary_distribution, validate_env
from .errors import (BankerWalkError, ConfigError, KernelError, NoDoeblinPower, NotCentered,
                     OutOfDomain, SingularSystem)
from .homogenize import Homogenizer, effective_coeffs, solve_poisson
from .kernel import PerturbationTerm, make_kernel, uniform_kernel, validate_kernel
from .regimes import CovarianceParams, classify, estimate_mean_deadlock, spectrum
from .rsde import DiffusionSpec, hit_time, hit_times, simulate_rsde, simulate_unfolded
from .walk import WalkConfig, monte_carlo_deadlock, simulate_free, simulate_reflected
