"""
fifuse: feature importance fusion.

Generates synthetic regression data with known feature importance, trains a
small model zoo, explains every model with permutation importance, Shapley
values and Integrated Gradients, and fuses the resulting importance vectors
with eight ensemble strategies.
"""

__version__ = "0.1.0"

from ._config import ExplainerConfig, FifuseConfig, FusionConfig, get_config, get_effective_config
from ._explainers import (
    AttributionMethod,
    BackgroundSet,
    Baseline,
    ImportanceVector,
    ShapleyWeights,
    background_from_data,
    base_value,
    build_background,
    exact_shapley,
    global_ig,
    integrated_gradients,
    kmeans_summarize,
    permutation_importance,
    sampled_shapley,
    shapley_values,
    shapley_weights,
    vectors_for_model,
)
from ._fusion import (
    FusionResult,
    FusionStrategy,
    ImportanceMatrix,
    build_importance_matrix,
    fuse,
    fuse_box_whiskers,
    fuse_majority_vote,
    fuse_mean,
    fuse_median,
    fuse_mode,
    fuse_rate,
    fuse_tau_test,
    read_matrix_csv,
    write_vectors_csv,
)
from ._harness import (
    ExperimentConfig,
    ExperimentReport,
    RunRecord,
    enumerate_grid,
    export_report,
    load_report,
    run_experiment,
    run_single,
    score,
    sme_vector,
)
from ._models import ModelKind, TrainedModel, default_hyperparams, input_gradient, predict, train
from ._stats import CorrelationResult, kendall_tau, rank_descending, spearman_rho, t_cdf, thompson_tau_threshold
from ._synthdata import (
    DataConfig,
    Dataset,
    generate_dataset,
    ground_truth_importance,
    load_dataset,
    save_dataset,
    split,
)
from ._utils import FifuseError

__all__ = [
    'DataConfig',
    'Dataset',
    'generate_dataset',
    'ground_truth_importance',
    'split',
    'save_dataset',
    'load_dataset',
    'ModelKind',
    'TrainedModel',
    'default_hyperparams',
    'train',
    'predict',
    'input_gradient',
    'AttributionMethod',
    'ImportanceVector',
    'ShapleyWeights',
    'Baseline',
    'BackgroundSet',
    'permutation_importance',
    'exact_shapley',
    'sampled_shapley',
    'shapley_values',
    'shapley_weights',
    'base_value',
    'kmeans_summarize',
    'background_from_data',
    'build_background',
    'integrated_gradients',
    'global_ig',
    'vectors_for_model',
    'FusionStrategy',
    'FusionResult',
    'ImportanceMatrix',
    'build_importance_matrix',
    'fuse',
    'fuse_mean',
    'fuse_median',
    'fuse_mode',
    'fuse_box_whiskers',
    'fuse_tau_test',
    'fuse_majority_vote',
    'fuse_rate',
    'read_matrix_csv',
    'write_vectors_csv',
    'CorrelationResult',
    'rank_descending',
    'kendall_tau',
    'spearman_rho',
    't_cdf',
    'thompson_tau_threshold',
    'ExperimentConfig',
    'ExperimentReport',
    'RunRecord',
    'enumerate_grid',
    'run_single',
    'run_experiment',
    'score',
    'sme_vector',
    'export_report',
    'load_report',
    'ExplainerConfig',
    'FusionConfig',
    'FifuseConfig',
    'get_config',
    'get_effective_config',
    'FifuseError',
]
