"""Multi-task learning with hierarchical graph feature augmentation.

Per-task similarity graphs feed a graph layer whose outputs are max-pooled
into task and class embeddings; two-layer cosine-attention networks update
the embeddings across tasks and classes; the updated embeddings augment
each sample's shared representation before its task head. A companion
verifier checks the ridge-regression training-loss and generalization
guarantees of constant task-embedding augmentation numerically.
"""

from .data import (
    CLASSIFICATION,
    REGRESSION,
    MultiTaskDataset,
    SplitSpec,
    TaskDataset,
    generate_synthetic_mtl,
    generate_synthetic_regression,
    load_csv_dataset,
    split,
    standardize,
    write_csv_dataset,
)
from .model import (
    HGNNModel,
    ModelConfig,
    backward,
    classification_loss,
    compute_embeddings,
    forward,
    init_model,
    parameters,
    predict_class,
    predict_regression,
    regression_loss,
)
from .training import AdamState, TrainConfig, adam_step, evaluate, grad_check, make_adam_state, train
from .theory import (
    BoundInputs,
    RidgeInstance,
    bound_rhs,
    check_psd,
    condition_matrix,
    run_theorem_sweep,
    solve_ridge,
    verify_theorem1,
    verify_theorem2_ordering,
)

__version__ = "0.1.0"
