"""Gradient boosted trees with training-sample influence estimates."""

from .dataio import Dataset, load_csv, flip_labels, filter_bias, BiasSpec
from .gbdt import Ensemble, Params, TrainingTrace, TreeStructure, fit, leaf_value, path, predict
from .influence import (
    AllPoints,
    InfluenceVector,
    RefitResult,
    SampledTopKLeaves,
    SinglePoint,
    TopKLeaves,
    UpdateSetStrategy,
    fast_leaf_influence,
    fast_leaf_refit,
    influence_grad,
    influence_loo,
    leaf_influence,
    leaf_influence_batch,
    leaf_recalc,
    leaf_refit,
    select_update_set,
)
from .loss import LossSpec, derivatives

__version__ = "0.1.0"
