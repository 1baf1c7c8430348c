"""Closed-loop correction of layered linear systems toward learned embedding subspaces."""

from .analytic import (AnalyticController, GainSchedule, LambdaSchedule, PracticalController,
                       analytic_feedback, lambda_fixed_point, lambda_schedule)
from .dynamics import LinearStack, forward, make_synthetic_task, propagate_basis
from .manifolds import ChannelKind, EmbeddingBasis, TrajectoryEnsemble, build_basis
from .riccati import RiccatiController, riccati_backward

__version__ = "0.1.0"
