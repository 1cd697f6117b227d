"""mvlab: a desk-scale numerical laboratory for mean-field SDEs whose noise
coefficient depends on the law of the solution.

The library decomposes the noise of a McKean-Vlasov SDE into a constant
elliptic part and a measure-dependent remainder, builds exact-hit couplings
steered by that decomposition (plain and Gramian-steered degenerate), tracks
the associated Girsanov weights, estimates intrinsic (Lions) derivatives of
the semigroup by Monte Carlo, and runs entropy-cost / ergodicity experiments
against closed-form Gaussian oracles.
"""

__version__ = "0.1.0"

from .errors import MVLabError
from .linalg import (
    HamiltonianStructure,
    decompose_noise,
    gramian,
    gramian_inverse_norm_slope,
    kalman_rank_index,
    matrix_exp,
    psd_sqrt,
)
from .measures import (
    EmpiricalMeasure,
    GaussianLaw,
    gaussian_fit,
    gaussian_kl,
    knn_relative_entropy,
    modified_distance,
    optimal_initial_coupling,
    wasserstein_2_modified,
    wasserstein_k,
)
from .models import MeanFieldModel, get_preset, list_presets
from .noise import NoisePlan, Stream
from .simulate import (
    LawFlow,
    ParticleEnsemble,
    euler_maruyama_step,
    gaussian_law_flow,
    hamiltonian_step,
    linear_closed_form,
    simulate_law_flow,
    xi_gap,
)
from .coupling import (
    CouplingRun,
    couple_degenerate,
    couple_nondegenerate,
    coupling_replicas,
    entropy_bound_probe,
    girsanov_logweight,
    weighted_law_transfer_check,
)
from .bismut import (
    BismutEstimate,
    bismut_degenerate,
    bismut_nondegenerate,
    derivative_rate_probe,
    lions_fd_oracle,
    tangent_flow,
)
from .harnack import (
    degenerate_entropy_cost_experiment,
    entropy_cost_experiment,
    log_harnack_check,
)
from .ergodicity import (
    check_dissipativity_E,
    check_dissipativity_F,
    degenerate_decay_rate,
    entropy_decay_rate,
    estimate_invariant_measure,
    lyapunov_rho,
    sandwich_constant,
    w2_decay_rate,
)

__all__ = [
    "__version__",
    "MVLabError",
    "HamiltonianStructure", "decompose_noise", "gramian",
    "gramian_inverse_norm_slope", "kalman_rank_index", "matrix_exp", "psd_sqrt",
    "EmpiricalMeasure", "GaussianLaw", "gaussian_fit", "gaussian_kl",
    "knn_relative_entropy", "modified_distance", "optimal_initial_coupling",
    "wasserstein_2_modified", "wasserstein_k",
    "MeanFieldModel", "get_preset", "list_presets",
    "NoisePlan", "Stream",
    "LawFlow", "ParticleEnsemble", "euler_maruyama_step", "gaussian_law_flow",
    "hamiltonian_step", "linear_closed_form", "simulate_law_flow", "xi_gap",
    "CouplingRun", "couple_degenerate", "couple_nondegenerate",
    "coupling_replicas", "entropy_bound_probe", "girsanov_logweight",
    "weighted_law_transfer_check",
    "BismutEstimate", "bismut_degenerate", "bismut_nondegenerate",
    "derivative_rate_probe", "lions_fd_oracle", "tangent_flow",
    "degenerate_entropy_cost_experiment", "entropy_cost_experiment",
    "log_harnack_check",
    "check_dissipativity_E", "check_dissipativity_F", "degenerate_decay_rate",
    "entropy_decay_rate", "estimate_invariant_measure", "lyapunov_rho",
    "sandwich_constant", "w2_decay_rate",
]
