"""perfed: simulator and solver suite for federated averaging under
model-induced distribution shift.

Layout: ``model`` (losses, shift maps, populations), ``solution`` (stable
and optimal points), ``theory`` (convergence constants and schedules),
``engine`` (the simulation loop), ``experiments`` (populations, replicate
statistics, sweeps), ``cli`` (the perfed command).
"""

from .engine import Participation, RunConfig, RunTrace, run
from .experiments import (
    CreditExperimentSpec,
    GaussianExperimentSpec,
    ReplicateSummary,
    make_credit_population,
    make_gaussian_population,
    rate_fit,
    run_replicates,
    sweep,
)
from .model import (
    AffineGaussianShift,
    LogisticLoss,
    Population,
    QuadraticMeanLoss,
    Sample,
    StrategicLinearShift,
    decoupled_risk,
    grad_loss,
    loss,
    strategic_shift,
)
from .solution import (
    POResult,
    PSResult,
    divergence_demo,
    performative_risk,
    phi,
    ps_po_gap_check,
    solve_po,
    solve_ps,
)
from .theory import (
    ConstantsBundle,
    ProblemConstants,
    ScheduleSpec,
    constants,
    practical_schedule,
    step_size,
    theorem_schedule,
    theoretical_bound,
    validate_schedule,
)

__version__ = "0.1.0"
