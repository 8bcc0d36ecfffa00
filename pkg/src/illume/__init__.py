"""Instance-wise latent surrogates for explaining black-box tabular classifiers.

A meta-encoder maps each row x to its own sparse linear transform W(x); a
global interpretable surrogate fitted on the latent codes W(x)^T x is then
pulled back into input space as feature importances, axis-parallel rules or
counterfactual rules.
"""

from .diffcore import ContractError, DimensionError, DomainError
from .explain import Explainer, LatentStore
from .geometry import FeatureSchema
from .metaenc import MetaEncoder, TrainingConfig, train
from .pipeline import PipelineModel, fit_pipeline, load_blackbox, load_dataset
from .surrogate import fit_logistic, fit_tree, fit_tree_tuned

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DimensionError",
    "DomainError",
    "Explainer",
    "FeatureSchema",
    "LatentStore",
    "MetaEncoder",
    "PipelineModel",
    "TrainingConfig",
    "fit_logistic",
    "fit_pipeline",
    "fit_tree",
    "fit_tree_tuned",
    "load_blackbox",
    "load_dataset",
    "train",
]
