"""Blind deconvolution and demixing of bilinear signal contributions.

Subpackages are plain modules:

- :mod:`~demixdeconv.operators`: ensembles, lifted operator, convolution
- :mod:`~demixdeconv.coherence`: coherence parameters and partitions
- :mod:`~demixdeconv.convex`: nuclear-norm recovery
- :mod:`~demixdeconv.wirtinger`: nonconvex recovery
- :mod:`~demixdeconv.certificate`: tangent spaces and the golfing certificate
- :mod:`~demixdeconv.harness`: experiments and the command line
"""

from .certificate import (
    build_frame,
    golfing_run,
    local_isometry_spectrum,
    project_tangent,
    sgn_lifted,
    verify_dual_conditions,
)
from .coherence import (
    b_norm,
    coherence_report,
    construct_partition,
    gamma_tilde,
    mu_h_sq,
    mu_max,
    verify_admissible,
)
from .convex import ConvexConfig, SolverResult, SolverStatus, solve_nuclear, svt
from .errors import (
    ConstructionError,
    DemixError,
    DimensionError,
    FrameError,
    NormalizationError,
    NumericError,
    PartitionDegeneracyError,
)
from .operators import (
    BasisKind,
    Encoder,
    FactoredSignal,
    LiftedSignal,
    MeasurementEnsemble,
    Observation,
    SubspaceBasis,
    adjoint,
    build_ensemble,
    circular_convolve,
    forward,
    lift,
    sample_factored,
    synthesize_observation,
)
from .wirtinger import WirtingerConfig, solve_wirtinger

__version__ = "0.1.0"
