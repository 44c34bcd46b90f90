"""Minority-class time-series synthesis with a conditional GAN.

The package covers the full loop: ingest labeled multivariate time series,
impute and scale them, train an LSTM-based conditional GAN on a from-scratch
autodiff engine, synthesize minority samples, measure their fidelity (binned
KL divergence, adversarial accuracy), and quantify the downstream effect on
an SVM classifier via skill scores.
"""

from .data import (
    ClassLabel,
    ConditionVector,
    DataError,
    Dataset,
    FeatureKind,
    ImputationError,
    IngestError,
    MvtsSample,
    ScalingError,
    apply_scaler,
    extract_feature,
    fit_scaler,
    impute_dataset,
    impute_linear,
    ingest_directory,
    invert_scaler,
    load_dataset,
    load_scaler,
    make_toy_dataset,
    one_hot,
    read_manifest,
    save_dataset,
    save_scaler,
    scale_dataset,
)
from .autodiff import (
    Adam,
    CheckpointError,
    DenseLayer,
    GraphStateError,
    LstmLayer,
    Sgd,
    ShapeError,
    Tensor,
    backward,
    bce_loss,
    load_params,
    no_grad,
    save_params,
)
from .cgan import (
    ConfigError,
    Discriminator,
    Generator,
    SynthesisError,
    TrainConfig,
    TrainResult,
    TrainingError,
    discriminator_loss,
    generator_loss,
    load_generator,
    synthesize,
    train,
)
from .metrics import (
    AaResult,
    BoxStats,
    EpochGroupReport,
    FeatureDistribution,
    MetricError,
    aa_by_feature,
    aa_per_channel,
    adversarial_accuracy,
    bin_features,
    epoch_report,
    kl_by_channel,
    kl_divergence,
    shared_edges,
    write_report_files,
)
from .classify import (
    ClassifyError,
    ConfusionMatrix,
    ConvergenceError,
    ExperimentError,
    ExperimentResult,
    SvmConfig,
    SvmModel,
    UndefinedScoreError,
    confusion,
    featurize,
    featurize_dataset,
    hss2,
    run_experiment,
    svm_decision,
    svm_predict,
    svm_train,
    tss,
    write_experiment_files,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
