"""Byzantine-robust federated learning at desk scale.

Simulator (``model``, ``data``, ``harness``), attacks, baseline aggregators
and a four-stage defense combining reputation-based client selection,
colluding-update filtering, spectral outlier removal and autoencoder
denoising of update directions.
"""
from .errors import (AttackError, ClusterError, ConfigError, DegenerateMatrix, DegenerateVector,
                     EmptyAggregation, EvalError, FormatError, FPDError, NonFiniteError, TrainError)
from .config import ExperimentConfig, load_config, parse_config_text
from .harness import RoundOutcome, detection_metrics, run_experiment, summarize

__version__ = "0.1.0"
