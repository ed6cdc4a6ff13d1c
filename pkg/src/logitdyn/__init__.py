"""Logit-space learning dynamics of GD and SAM updates on a fixed-feature softmax head."""

from .dynamics import (
    ConfidenceRatios,
    DynamicsPrediction,
    Optimizer,
    Top2Diagnostics,
    UpdateConfig,
    confidence_ratios,
    frozen_modal_step,
    gd_step,
    logits_sam_step,
    modal_step_predict,
    predict_step,
    prediction_error,
    ratio_factorization,
    remainder_scaling,
    sam_full_step,
    step,
    top2_diagnostics,
)
from .errors import (
    DegenerateFeatureError,
    InvalidInputError,
    LogitDynError,
    NonFiniteStateError,
    NumericalFailureError,
    OracleFailureError,
)
from .geometry import (
    FeatureVector,
    ModalBasis,
    apply_parameter_hessian,
    cross_entropy,
    hessian_residual_product,
    jacobi_eigh,
    logit_gradient,
    logit_hessian,
    min_norm_preimage,
    parameter_gradient,
    softmax,
    spectral_decompose,
)
from .objectives import (
    DPOConfig,
    PreferencePair,
    Sign,
    SignConvention,
    dpo_loss,
    dpo_parameter_gradient,
    implicit_reward_margin,
    signed_objective,
)

__version__ = "0.1.0"
