"""bayesmem: continual-learning classification over fixed feature vectors.

Each class is represented by one 1-D probability density per feature
dimension (GMM fit by EM, or Gaussian KDE), plus its training count.
Prediction is a factorized Bayes rule over those densities.  Learning new
classes never touches old ones, so nothing is forgotten.
"""

__version__ = "0.1.0"

from bayesmem.backend import active_backend
from bayesmem.classifier import (
    ClassScores,
    class_log_likelihood,
    class_means,
    log_prior,
    posterior,
    predict,
    predict_batch,
    predict_ncm,
)
from bayesmem.density import (
    BANDWIDTH_FLOOR,
    SIGMA_FLOOR,
    DensityModel,
    EmConfig,
    GaussianComponent,
    Gmm1D,
    Kde1D,
    fit_gmm,
    fit_kde,
    gmm_log_pdf,
    kde_log_pdf,
    log_pdf,
)
from bayesmem.features import (
    FeatureDataset,
    FeatureRecord,
    l2_normalize,
    load_shard,
    select_features,
    split_by_class,
    subsample_features,
    write_shard,
)
from bayesmem.memory import (
    ClassMemory,
    EstimatorConfig,
    MemoryBank,
    add_class,
    form_memory,
    load_bank,
    memory_footprint,
    save_bank,
    serialize_class_memory,
    update_class,
)
from bayesmem.protocol import (
    EvalReport,
    ProtocolConfig,
    RoundReport,
    SyntheticClassSpec,
    bimodal_class_specs,
    estimate_bayes_error,
    make_synthetic_dataset,
    mean_class_recall,
    run_class_incremental,
    run_data_incremental,
    run_protocol,
    run_repeated,
    separated_class_specs,
    sweep,
)
from bayesmem.utils import BayesmemError, DataFormatError, ValidationError

__all__ = [
    "__version__",
    "active_backend",
    "BayesmemError",
    "DataFormatError",
    "ValidationError",
    "FeatureRecord",
    "FeatureDataset",
    "load_shard",
    "write_shard",
    "l2_normalize",
    "subsample_features",
    "select_features",
    "split_by_class",
    "SIGMA_FLOOR",
    "BANDWIDTH_FLOOR",
    "EmConfig",
    "GaussianComponent",
    "Gmm1D",
    "Kde1D",
    "DensityModel",
    "fit_gmm",
    "fit_kde",
    "gmm_log_pdf",
    "kde_log_pdf",
    "log_pdf",
    "EstimatorConfig",
    "ClassMemory",
    "MemoryBank",
    "form_memory",
    "add_class",
    "update_class",
    "save_bank",
    "load_bank",
    "serialize_class_memory",
    "memory_footprint",
    "ClassScores",
    "class_log_likelihood",
    "log_prior",
    "predict",
    "predict_batch",
    "posterior",
    "class_means",
    "predict_ncm",
    "ProtocolConfig",
    "RoundReport",
    "EvalReport",
    "SyntheticClassSpec",
    "separated_class_specs",
    "bimodal_class_specs",
    "make_synthetic_dataset",
    "estimate_bayes_error",
    "mean_class_recall",
    "run_class_incremental",
    "run_data_incremental",
    "run_protocol",
    "run_repeated",
    "sweep",
]
