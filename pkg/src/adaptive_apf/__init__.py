"""Auxiliary particle filtering with adaptive proposal selection.

The library is organised bottom-up:

* :mod:`~adaptive_apf.sample`: weighted samples, CV², entropy, ESS, resampling.
* :mod:`~adaptive_apf.models`: scalar Gaussian state-space models (ARCH, AR(1)),
  simulation and a Kalman oracle.
* :mod:`~adaptive_apf.apf`: one auxiliary particle filter step.
* :mod:`~adaptive_apf.adapt`: frozen-noise KLD/CSD minimization and cross-entropy
  adaptation of the proposal kernel.
* :mod:`~adaptive_apf.gaussian`: closed forms for Gaussian noise models and
  quadrature values of the limiting criteria.
* :mod:`~adaptive_apf.bench`: the outlier benchmark harness (also behind the CLI).
"""

from .adapt import (
    AdaptOptions,
    AdaptTrace,
    CeDegeneracyError,
    CeOptions,
    Criterion,
    Optimizer,
    ProposalFamily,
    adaptive_apf_step,
    ce_adapt_step,
    empirical_objective,
    grad_csd_estimate,
    grad_kld_estimate,
    minimize_fd_descent,
    minimize_scalar,
)
from .apf import (
    AdjustmentFunction,
    ApfStepOutput,
    DegenerateProposalError,
    ParticleDeathError,
    ProposalKernel,
    apf_step,
    constant_adjustment,
    gaussian_kernel,
    initial_sample,
    log_phi_weight,
    phi_weight,
    prior_kernel,
    unnormalized_kernel_log_density,
)
from .gaussian import (
    QuadratureError,
    eta,
    eta2,
    kld_closed_form,
    limit_criteria_quadrature,
    limit_csd_quadrature,
    limit_kld_quadrature,
    log_psi_chi2_prior,
    log_psi_star,
    psi_chi2_prior,
    psi_chi2_prior_adjustment,
    psi_star,
    psi_star_adjustment,
    r_star_kernel,
    scale_family,
    stationary_nu,
    tau,
)
from .models import (
    BENCHMARK_ARCH,
    ArchParams,
    InvalidParamsError,
    ObservationSequence,
    StateSpaceModel,
    arch_model,
    kalman_oracle,
    linear_gaussian_model,
    outlier_sequence,
    simulate,
)
from .sample import (
    InvalidWeightsError,
    WeightedSample,
    cv2,
    entropy,
    ess,
    log_normalize,
    make_rng,
    multinomial_resample,
    self_normalized_estimate,
)

__version__ = "0.1.0"
