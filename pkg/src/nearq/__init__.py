"""Offline backward Q-learning with tolerance-based near-equivalent policy sets."""

__version__ = "0.1.0"

from .core import (
    ActionSpace,
    DatasetError,
    OfflineDataset,
    PatientTrajectory,
    SchemaError,
    StageRecord,
    ValidationReport,
    history_features,
    load_csv,
    save_csv,
    validate,
)
from .envs import (
    CancerParams,
    CancerState,
    ItrConfig,
    cancer_reward,
    cancer_transition,
    simulate_cancer_cohort,
    simulate_itr,
    true_blip,
)
from .evalkit import (
    BandStats,
    EvalResult,
    band_stats,
    blip_surface,
    constant_dose_baselines,
    epsilon_band_curve,
    evaluate_policy,
)
from .nearequiv import (
    AdmissibleSet,
    EpsilonConfig,
    NearEquivQStack,
    PolicySet,
    admissible_actions,
    backward_fit_near_equiv,
    policy_set,
    pseudo_outcome_matrix,
    select_and_pad,
)
from .qlearn import (
    GreedyPolicy,
    QStack,
    backward_fit,
    fit_final_stage,
    greedy_action,
    greedy_policy,
    pseudo_outcome_vector,
)
from .regression import (
    DesignSpec,
    FittedQ,
    RankDeficientError,
    fit,
    load_model,
    save_model,
)

__all__ = [
    "ActionSpace",
    "AdmissibleSet",
    "BandStats",
    "CancerParams",
    "CancerState",
    "DatasetError",
    "DesignSpec",
    "EpsilonConfig",
    "EvalResult",
    "FittedQ",
    "GreedyPolicy",
    "ItrConfig",
    "NearEquivQStack",
    "OfflineDataset",
    "PatientTrajectory",
    "PolicySet",
    "QStack",
    "RankDeficientError",
    "SchemaError",
    "StageRecord",
    "ValidationReport",
    "admissible_actions",
    "backward_fit",
    "backward_fit_near_equiv",
    "band_stats",
    "blip_surface",
    "cancer_reward",
    "cancer_transition",
    "constant_dose_baselines",
    "epsilon_band_curve",
    "evaluate_policy",
    "fit",
    "fit_final_stage",
    "greedy_action",
    "greedy_policy",
    "history_features",
    "load_csv",
    "load_model",
    "policy_set",
    "pseudo_outcome_matrix",
    "pseudo_outcome_vector",
    "save_csv",
    "save_model",
    "select_and_pad",
    "simulate_cancer_cohort",
    "simulate_itr",
    "true_blip",
    "validate",
]
