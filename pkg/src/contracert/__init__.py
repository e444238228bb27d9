"""Certified contraction regions for neural feedback policies.

Jointly trains a neural policy and a factored neural Riemannian metric
whose contraction over a box region of state space is established by
interval bound propagation plus exact corner checks of the resulting
interval matrices, and derives an explicit exponential tracking
controller for control-affine systems.
"""

__version__ = "0.1.0"

from .boundprop import HullReport, Region, hull_over_region  # noqa: F401
from .certify import (  # noqa: F401
    Certificate,
    certify_region,
    corner_max_log_norm,
    falsify_by_sampling,
)
from .intervals import Interval, IntervalMatrix  # noqa: F401
from .nets import MetricNet, MlpParams, PolicyNet  # noqa: F401
from .problem import ContractionProblem, warm_start_problem  # noqa: F401
from .systems import ControlAffineSystem, benchmark_system  # noqa: F401
from .tracking import flat_reference, simulate, tracking_control  # noqa: F401
from .train import (  # noqa: F401
    CurriculumConfig,
    OptimizerConfig,
    loss,
    loss_gradient,
    train_curriculum,
)
