"""Earthquake hypocenter location by unbalanced optimal-transport misfits."""

__version__ = "0.1.0"

from .signal import (  # noqa: F401
    DiscreteMeasure,
    NoiseSpec,
    Seismogram,
    add_noise,
    read_csv,
    resample,
    square_to_measure,
    window,
    write_csv,
)
from .wfr import (  # noqa: F401
    CostMatrix,
    DualPotentials,
    TransportPlanPair,
    WFRParams,
    WFRResult,
    brute_force_wfr,
    cost_matrix,
    dirac_wfr,
    dual_objective,
    solve_regularized,
    wfr_distance,
)
from .w2 import NormalizedMeasure, normalize, w2_1d, w2_misfit  # noqa: F401
from .acoustic import (  # noqa: F401
    Grid2D,
    ReceiverSet,
    SourceSpec,
    VelocityModel,
    build_model,
    cfl_dt,
    delta_weights,
    forward,
    ricker,
)
from .adjoint import (  # noqa: F401
    AdjointSource,
    GradientAtSource,
    ProblemSetup,
    adjoint_solve,
    adjoint_source,
    kernels,
    objective_gradient,
)
from .locator import (  # noqa: F401
    LocateConfig,
    LocationHistory,
    NoiseStudyResult,
    landscape_scan,
    locate,
    monte_carlo,
    objective,
)
from .experiments import RunManifest, Scenario, builtin_scenario  # noqa: F401
