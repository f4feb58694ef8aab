"""Feature embedding of time points and Relief feature weighting."""

from src.features.embed import (
    FeatureConfig,
    FeatureGenerator,
    FeatureScaler,
    FeatureVector,
    FeatureWeights,
    StdMode,
    TrafficFeatures,
    feature_matrix,
    featurize,
    featurize_series,
    weighted_distance,
    write_feature_csv,
)
from src.features.relief import (
    DEFAULT_XI,
    Category,
    CategoryTag,
    CategoryThreshold,
    ReliefResult,
    fit_threshold,
    optimize_weights,
    tag_categories,
    uniform_weights,
)

__all__ = [
    "DEFAULT_XI",
    "Category",
    "CategoryTag",
    "CategoryThreshold",
    "FeatureConfig",
    "FeatureGenerator",
    "FeatureScaler",
    "FeatureVector",
    "FeatureWeights",
    "ReliefResult",
    "StdMode",
    "TrafficFeatures",
    "feature_matrix",
    "featurize",
    "featurize_series",
    "fit_threshold",
    "optimize_weights",
    "tag_categories",
    "uniform_weights",
    "weighted_distance",
    "write_feature_csv",
]
