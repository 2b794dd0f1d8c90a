"""Online vertical federated learning (OVFL) simulator for cooperative spectrum sensing."""

from .errors import ConfigError, NumericDivergenceError, OvflError, ProtocolError, ShapeError
from .nn_core import MlpParams, SplitModel, init_split_model
from .quantize import QuantizerSpec, quantize
from .environment import SensingEnvironment, WorldConfig, generate_stream
from .protocol import ProtocolConfig, TrainerState, cc_round, lc_round, ovfl_round, run_rounds
from .config import RunConfig, load_config, parse_config

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "NumericDivergenceError", "OvflError", "ProtocolError", "ShapeError",
    "MlpParams", "SplitModel", "init_split_model",
    "QuantizerSpec", "quantize",
    "SensingEnvironment", "WorldConfig", "generate_stream",
    "ProtocolConfig", "TrainerState", "cc_round", "lc_round", "ovfl_round", "run_rounds",
    "RunConfig", "load_config", "parse_config",
]
