"""Self-interacting Markov chain Monte Carlo for Feynman-Kac distribution flows."""

from .errors import *  # noqa: F401,F403
from .exact_oracle import ExactFlow, brute_force_gamma, exact_path_target, solve_flow
from .kernels import (
    FeynmanKacModel,
    RegularityConstants,
    beta_p,
    contraction_bound,
    h_ratio,
    mixing_constants,
    phi_step,
    q_apply,
    semigroup_p,
    time_averaged_phi,
)
from .measures import (
    DiscreteMeasure,
    FiniteKernel,
    OccupationMeasure,
    StateSpace,
    boltzmann_gibbs,
    dobrushin,
    integrate,
    occupation_push,
    product_occupation,
    total_variation,
)
from .samplers import (
    BaseMCMC,
    DirectPhi,
    IMcmcRun,
    MetropolisHastings,
    ParticleRun,
    direct_phi_draw,
    estimate_normalizers,
    hybrid_init,
    mh_dobrushin_bound,
    mh_step,
    simulate,
    smc_run,
)

__version__ = "0.1.0"
