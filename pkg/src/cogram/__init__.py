"""Model-fusion toolkit: trains small dense classifiers on synthetic tasks
and merges them without retraining, guided by loss comparisons on prototype
evaluation sets, with uniform-averaging and Fisher-weighted baselines."""

from .baseline import FisherInfo, fisher_information, fisher_merge, uniform_average
from .merge import (
    DecisionRecord,
    LevelThresholds,
    MergeConfig,
    MergeReport,
    Thresholds,
    build_eval_set,
    classify_case,
    cogram_iterate,
    cogram_merge,
    convex_combine,
    gradient_kickoff,
    loss_difference,
    mixing_factor,
)
from .net import (
    DenseLayer,
    FormatError,
    Gradients,
    Network,
    ShapeError,
    StructureAddress,
    backward,
    compatible,
    cross_entropy_loss,
    deserialize,
    forward,
    get_structure,
    load_model,
    log_softmax,
    mse_loss,
    random_network,
    save_model,
    serialize,
    set_structure,
    softmax,
)
from .prototypes import (
    Prototype,
    PrototypeSet,
    build_prototypes_kmeans,
    build_prototypes_onehot,
    build_raw_batch,
    geometric_mean_prototype,
)
from .synthdata import DataConfig, Dataset, generate_pair, generate_task
from .training import (
    OptimizerConfig,
    TrainReport,
    accuracy,
    clip_gradients,
    optimizer_step,
    train,
)

__version__ = "0.1.0"
