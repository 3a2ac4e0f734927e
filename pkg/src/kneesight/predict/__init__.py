"""Early-life SOH / RUL regression and its evaluation harness."""

from .baselines import LinearModel, fit_baseline, linear_capacity_validation
from .dataset import (
    CellRecord,
    FeatureOptions,
    MissingEOL,
    SupervisedDataset,
    audit_folds,
    audit_leakage,
    cell_level_split,
    make_dataset,
    temporal_split,
)
from .evaluate import (
    EvalReport,
    calibration_report,
    cross_dataset_matrix,
    cross_validate,
    evaluate,
    permutation_importance,
)
from .forest import ForestConfig, ForestModel, UncertainPrediction, fit_forest, predict_with_variance
from .models import ModelSpec, fit_inr_regressor, fit_model
