"""Deterministic federated-learning simulation framework.

Aggregation-delayed training with redistribution rounds, importance-
proportional client selection, FedAvg/FedProx baselines, a QP-based
non-IID data partitioner over transportation polytopes, and weight-
divergence diagnostics.
"""

from .data import (
    ClientDataset,
    DatasetSchema,
    StandardizationStats,
    TabularDataset,
    build_client_datasets,
    load_csv,
    standardize,
    synth_gaussian_mixture,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    InfeasibleError,
    IngestionError,
    NumericError,
    ParameterError,
    RadfedError,
    UndefinedMetricError,
)
from .fedcore import (
    ExperimentResult,
    FederatedConfig,
    FoldSpec,
    ImportanceState,
    RoundRecord,
    init_importance,
    make_folds,
    run_experiment,
    run_fedavg_round,
    run_radfed_round,
    run_round,
    sample_importance,
    sample_uniform,
    update_importance,
)
from .metrics import (
    DivergenceTrace,
    auc_score,
    centralized_twin_run,
    dc_divergence,
    dl_divergence,
    evaluate,
    norm_distance,
)
from .model import (
    ModelFamily,
    ModelState,
    TrainingConfig,
    average_models,
    client_update,
    init_model,
    linear_family,
    load_checkpoint,
    logistic_family,
    loss_and_grad,
    mlp_family,
    predict,
    predict_proba,
    save_checkpoint,
    weighted_average_models,
)
from .partition import (
    DirichletPriors,
    IntegerPartition,
    PartitionMatrix,
    PartitionResult,
    PartitionTarget,
    assign_samples,
    build_target_class_size,
    build_target_full,
    c_score,
    partition_dataset,
    random_qp_solution,
    randomize_step,
    round_marginals,
    round_partition,
    sample_dirichlet,
    solve_qp,
    target_from_class_draws,
    target_from_full_draws,
    transport_project,
)
from .rng import derive_rng

__version__ = "0.1.0"
