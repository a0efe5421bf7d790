"""Exchangeable Gaussian-process counterfactuals for panel data."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ExchGPError,
    FitError,
    NumericalError,
    PanelDataError,
    PipelineError,
)
from .hyperopt import FitOptions, FitResult, fit, intraclass_rho  # noqa: E402
from .kernels import KernelKind, KernelSpec, gram  # noqa: E402
from .model import (  # noqa: E402
    PRESETS,
    CovariateKernel,
    HyperParams,
    Inputs,
    ModelSpec,
    TimeKernel,
    log_marginal_likelihood,
    lml_gradient,
    preset,
)
from .panel import PanelDataset, UnitRecord, load_panel, make_split, write_panel  # noqa: E402
from .predict import (  # noqa: E402
    GaussianPredictive,
    att_by_time,
    effect_summary,
    posterior_predictive,
)
from .harness import (  # noqa: E402
    StaggeredConfig,
    leave_one_out_validation,
    score,
    staggered_pipeline,
)
