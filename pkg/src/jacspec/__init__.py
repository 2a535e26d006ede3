"""jacspec: Jacobian singular-value spectra of deep orthogonal-weight networks.

Simulation side: seeded Haar SO(n) sampling, the forward recurrence, the
Jacobian product and its Gram spectrum.  Theory side: layer-scale recursion,
squared-derivative laws, free multiplicative convolution via its
functional-equation system, Stieltjes--Perron densities and the depth-L
master equation.  The two meet in comparison reports (KS distance, moments,
dynamical-isometry metrics) driven by the ``jacspec`` command line.
"""

from .freeconv import (
    ConvergenceError,
    FixedPointSolution,
    IsometryMetrics,
    QProfile,
    QuadratureRule,
    depth_spectrum,
    free_mult_conv,
    gauss_hermite,
    isometry_metrics,
    master_equation,
    nu_k_measure,
    q_fixed_point,
    q_recursion,
    smoothed_density,
    solve_fixed_point,
    solve_on_negative_axis,
)
from .measures import (
    Atomic,
    DomainError,
    Empirical,
    GridDensity,
    HerglotzSample,
    InversionError,
    RangeError,
    SpectralMeasure,
    dilate,
    inverse_mgf,
    ks_distance,
    measure_from_json,
    measure_to_json,
    mgf,
    moments,
    s_transform,
    stieltjes,
    stieltjes_inversion,
    support_max,
)
from .network import (
    ConfigError,
    ConstantNorm,
    ExplicitVector,
    ForwardTrace,
    IidFromSeed,
    NetworkConfig,
    assemble_jacobian,
    empirical_ncm,
    forward_pass,
    gram_matrix,
    layer_q,
)
from .nonlinearity import Nonlinearity, hard_tanh, parse_nonlinearity, scaled_erf, sine
from .rng import (
    make_rng,
    sample_gaussian_vector,
    sample_haar_orthogonal,
    sample_uniform_sphere,
    trial_rng,
)

__version__ = "0.1.0"
