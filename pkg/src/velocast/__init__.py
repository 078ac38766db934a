"""Origin-destination bike-share demand forecasting toolkit.

Zones are aggregated from a fine partition, demand lives on a graph of
OD (origin-destination) zone pairs, and an encoder-decoder network with
multi-graph convolutions forecasts the next hour from demand lags plus
optional weather, car-flow, and calendar context. A synthetic-city
generator with a known ground truth backs the test and benchmark suites,
and a staged CLI (synth -> aggregate -> graphs -> featurize -> train ->
eval -> report) runs the whole chain reproducibly from one config file.
"""

from .config import RunConfig, validate_config
from .errors import VelocastError
from .estimators import DemandForecaster, ZoneAggregator
from .features import VARIANTS, PanelScaler
from .geo import aggregate_to, load_partition
from .graphs import build_stack
from .model import ForecastNetwork, ModelConfig, load_model, save_model
from .pipeline import (
    MetricsReport, TrainConfig, build_dataset, evaluate, mape, mse,
    standard_scenarios, train,
)
from .stages import STAGES, run_stage
from .synth import SynthConfig, write_dataset

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "validate_config", "VelocastError", "DemandForecaster",
    "ZoneAggregator", "VARIANTS", "PanelScaler", "aggregate_to",
    "load_partition", "build_stack", "ForecastNetwork", "ModelConfig",
    "load_model", "save_model", "MetricsReport", "TrainConfig",
    "build_dataset", "evaluate", "mape", "mse", "standard_scenarios",
    "train", "STAGES", "run_stage", "SynthConfig", "write_dataset",
    "__version__",
]
