"""Two-time-scale stochastic approximation with controlled Markov noise.

Simulation (:mod:`ttsa.sa_engine`), clocks and ODE shadowing
(:mod:`ttsa.timescale`), occupation measures (:mod:`ttsa.occupation`),
invariant-measure sets, differential inclusions and chain recurrence
(:mod:`ttsa.invariants`), and a reproducible command-line front end
(:mod:`ttsa.cli`).
"""

__version__ = "0.1.0"

from .errors import TTSAError  # noqa: E402
from .fields import ProblemInstance, make_scenario  # noqa: E402
from .markov_kernel import NoiseKernel, stationary_distribution  # noqa: E402
from .sa_engine import NoiseModel, PowerLaw, StepSchedule, TrajectoryRecord, run_batch, run_iterates, validate_schedule  # noqa: E402

__all__ = [
    "NoiseKernel", "NoiseModel", "PowerLaw", "ProblemInstance", "StepSchedule", "TTSAError",
    "TrajectoryRecord", "make_scenario", "run_batch", "run_iterates", "stationary_distribution",
    "validate_schedule",
]
