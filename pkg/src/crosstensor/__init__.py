"""Cross measurements and completion of order-3 Tucker low-rank tensors."""

__version__ = "0.1.0"

from .completion import (
    CompletionReport,
    NoisyConfig,
    arm_joint_ratio,
    complete_noiseless,
    complete_noisy,
    default_lambda,
    joint_body_ratio,
)
from .cross_scheme import (
    CrossIndices,
    CrossObservations,
    degrees_of_freedom,
    extract_observations,
    measurement_count,
    random_cross_indices,
    rho_policy_indices,
    rho_policy_sizes,
    sampling_ratio,
)
from .estimators import HOSVD, CrossCompleter, CrossSampler
from .tensor_core import (
    TuckerFactors,
    fold,
    hosvd,
    hs_norm,
    matricize,
    mode_product,
    multi_mode_product,
    numerical_rank,
    pinv,
)

__all__ = [
    "CompletionReport",
    "CrossCompleter",
    "CrossIndices",
    "CrossObservations",
    "CrossSampler",
    "HOSVD",
    "NoisyConfig",
    "TuckerFactors",
    "arm_joint_ratio",
    "complete_noiseless",
    "complete_noisy",
    "default_lambda",
    "degrees_of_freedom",
    "extract_observations",
    "fold",
    "hosvd",
    "hs_norm",
    "joint_body_ratio",
    "matricize",
    "measurement_count",
    "mode_product",
    "multi_mode_product",
    "numerical_rank",
    "pinv",
    "random_cross_indices",
    "rho_policy_indices",
    "rho_policy_sizes",
    "sampling_ratio",
]
