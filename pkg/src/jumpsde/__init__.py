"""jumpsde: simulation and property-verification lab for jump SDEs with
super-linear, non-Lipschitz coefficients."""

__version__ = "0.1.0"

from .coefficients import (CoefficientModel, GrowthGauge, MarkSpace,
                           apply_cutoff, build_gauge, build_model,
                           check_growth_assumption, check_jump_homeomorphism,
                           check_log_lipschitz, eval_coefficients)
from .integrator import (SchemeConfig, Trajectory, TrajectorySet,
                         exact_linear_jump, simulate, simulate_batch,
                         simulate_flow)
from .lyapunov import (LyapunovPair, YamadaSequence, build_lyapunov,
                       build_yamada_sequence)
from .noise import (NoisePath, ScenarioSeed, couple, dump_noise, load_noise,
                    refine, sample_noise)

__all__ = [
    "__version__",
    "CoefficientModel", "GrowthGauge", "MarkSpace", "apply_cutoff",
    "build_gauge", "build_model", "check_growth_assumption",
    "check_jump_homeomorphism", "check_log_lipschitz", "eval_coefficients",
    "SchemeConfig", "Trajectory", "TrajectorySet", "exact_linear_jump",
    "simulate", "simulate_batch", "simulate_flow",
    "LyapunovPair", "YamadaSequence", "build_lyapunov",
    "build_yamada_sequence",
    "NoisePath", "ScenarioSeed", "couple", "dump_noise", "load_noise",
    "refine", "sample_noise",
]
