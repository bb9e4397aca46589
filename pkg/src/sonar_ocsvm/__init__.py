"""Streaming one-class novelty detection with margin guarantees."""

from ._validation import ConfigError, InputError, NotFittedError
from .config import RunConfig, defaults, load_config
from .kernel_features import (
    RandomFourierFeatures,
    RffConfig,
    RffMap,
    embed,
    embed_many,
    kernel_exact,
    recommended_feature_count,
    sample_rff,
)
from .metrics import MetricTrace, aggregate, offline_eval, record, smooth
from .objective import (
    EmpiricalMeasure,
    eval_erm_ocsvm,
    eval_F,
    eval_soft_ocsvm,
    minimize_F,
    minimize_soft_ocsvm,
    strong_convexity_probe,
    subgradient_F,
    support_margin,
)
from .sgd_ocsvm import DivergenceError, OnlineOCSVM
from .sonar import NORMAL, OUTLIER, SONAR, ModelState, SonarParams, init_state, load_state, save_state, step
from .sonarc import SONARC, CpdConfig, oracle_restart_runner, run_cpd, tune_threshold
from .streams import DataError, PhaseSpec, StreamEvent, generate, ingest_csv, preset

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
