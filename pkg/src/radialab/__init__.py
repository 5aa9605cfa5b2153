"""Numerical toolkit for the magnitude of high-dimensional radial laws.

A radial law on R^(d+1) with shape psi has magnitude density
``c_d u**d psi(u)``. The package builds that law exactly (log-domain
quadrature plus a CDF table), compares it with its large-d limit, samples
it reproducibly and runs the experiments exposed by the ``radialab`` CLI.
"""

from .distributions import (
    LimitLaw,
    RadialLaw,
    asym_log_inv_cd,
    build_law,
    concentration_scale,
    deterministic_ks,
    example1_ud_asymptotic,
    limit_law,
    mode_radius,
)
from .errors import (
    BracketFailure,
    ConfigError,
    DivergentIntegral,
    EmptySample,
    MissingTail,
    NonConvergence,
    NonIntegerDimension,
    NumericalError,
    RadialabError,
    RegularityFailure,
    ShapeDomainError,
)
from .sampling import SampleBatch, VectorBatch, sample_magnitudes, sample_vectors
from .shapes import ShapeSpec, gaussian, logpoly, power_tail, triangle, uniform_ball

__version__ = "0.1.0"
