"""Classification of irregular, multi-resolution multivariate time series.

The package bundles a small reverse-mode differentiation core, the FIT model
family built on it (FIT, FIT-V, Multi-FIT, Multi-FIT-V, plus the BA-mean
baseline), the feature pipeline that turns raw irregular observations into
gridded mask/delta/last-observed tensors, dataset loaders, and an experiment
harness with a CLI.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402,F401
    CacheError,
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FitnetError,
    NumericError,
    ParseError,
)
from .tensor import Parameter, Tensor, backward, tensor  # noqa: E402,F401
from .gradcheck import grad_check  # noqa: E402,F401
from .optim import Adam, Sgd  # noqa: E402,F401
from .features import (  # noqa: E402,F401
    FitFeatures,
    NormalizationStats,
    RawRecord,
    build_fit_features,
    grid_record,
    inject_missingness,
    pearson_corr,
    split_dataset,
)
from .models import (  # noqa: E402,F401
    BranchAssignment,
    FitModelParams,
    ModelKind,
    SupportMap,
    ba_mean_forward,
    fit_forward,
    init_fit_model,
    multifit_forward,
    partition_fast_slow,
    select_support_signals,
)
from .datasets import SyntheticConfig, generate_synthetic  # noqa: E402,F401
from .config import ExperimentConfig, load_config  # noqa: E402,F401
from .metrics import compute_metrics  # noqa: E402,F401
from .training import evaluate_model, prepare_data, run_experiment, train_model  # noqa: E402,F401
from .sweep import missingness_sweep  # noqa: E402,F401
