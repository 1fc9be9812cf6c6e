"""High-order Moreau envelope smoothing and (Boosted) inexact proximal point methods.

Submodules:

* :mod:`homeopt.envelope`   -- envelope/prox primitives, oracle interface, kappa(t)
* :mod:`homeopt.inner`      -- subgradient prox solvers and the brute-force grid prox
* :mod:`homeopt.hippa`      -- HiPPA, Boosted HiPPA, traces and certificates
* :mod:`homeopt.recovery`   -- robust low-rank matrix recovery benchmark
* :mod:`homeopt.validation` -- brute-force checks of the envelope theory
* :mod:`homeopt.harness`    -- experiment configs, baselines, CSV/JSON output
"""

from .envelope import (
    EnvelopeParams,
    Oracle,
    ProxApproximation,
    home_gradient,
    kappa,
    kappa_threshold,
    make_prox_approximation,
    residual_norm,
    subproblem_value,
)
from .errors import (
    HomeOptError,
    InvalidArgument,
    OracleFailure,
    ResourceLimit,
    SolverDiverged,
)
from .hippa import (
    ErrorSchedule,
    SpectralConfig,
    StoppingRule,
    boosted_hippa_run,
    boosted_hippa_step,
    hippa_run,
    spectral_sigma,
)
from .inner import (
    GridSpec,
    InnerBudgetSchedule,
    SgdssSchedule,
    brute_force_prox,
    solve_prox_baseline,
    solve_prox_sgdss,
)

__version__ = "0.1.0"
