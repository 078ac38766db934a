"""Scikit-learn style wrappers around the aggregation and forecast APIs.

Both estimators follow the fit/transform/predict idiom with get_params
support so they compose with sklearn tooling (cloning, grid search over
widths or learning rates). The underlying data stays domain-shaped:
partitions and forecast datasets rather than flat design matrices.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ModelError
from .features import VARIANTS
from .geo import Station, ZonePartition, aggregate_to, assign_stations
from .graphs import AdjacencyStack
from .model import EmbeddingConfig, ForecastNetwork, ModelConfig
from .pipeline import ForecastDataset, TrainConfig, train

__all__ = ["ZoneAggregator", "DemandForecaster"]


class ZoneAggregator(BaseEstimator, TransformerMixin):
    """Learn a merge-down of a fine partition, then map stations into it.

    fit() runs the greedy contiguity-preserving aggregation to n_zones;
    transform() assigns station coordinates to the merged zones.
    """

    def __init__(self, n_zones: int = 50):
        self.n_zones = n_zones

    def fit(self, partition: ZonePartition, y=None):
        self.partition_ = aggregate_to(partition, self.n_zones)
        self.members_ = {z: list(m) for z, m in self.partition_.members.items()}
        return self

    def transform(self, stations: list[Station]) -> list[Station]:
        if not hasattr(self, "partition_"):
            raise ModelError("ZoneAggregator.transform called before fit")
        return assign_stations(self.partition_, stations)


class DemandForecaster(BaseEstimator):
    """Forecast network plus its training loop behind one estimator.

    fit(dataset, stack) trains a fresh network; predict(dataset, stack)
    returns an [n_samples, n_od_pairs] array of clamped forecasts.
    """

    def __init__(self, variant: str = "X", h_t: int = 64, h_s: int = 64,
                 k_e: int = 3, k_d: int = 3, activation: str = "relu",
                 dropout: float = 0.7, cell: str = "gru", p: int = 10,
                 lr: float = 5e-5, decay: float = 1e-6, batch_size: int = 16,
                 epochs: int = 80, seed: int = 0,
                 stop_below: float | None = None):
        self.variant = variant
        self.h_t = h_t
        self.h_s = h_s
        self.k_e = k_e
        self.k_d = k_d
        self.activation = activation
        self.dropout = dropout
        self.cell = cell
        self.p = p
        self.lr = lr
        self.decay = decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.stop_below = stop_below

    def model_config(self) -> ModelConfig:
        if self.variant not in VARIANTS:
            raise ModelError(
                f"unknown variant {self.variant!r}; choose from "
                f"{sorted(VARIANTS)}"
            )
        embedding = EmbeddingConfig(p=self.p) if self.p else EmbeddingConfig()
        return ModelConfig(
            h_t=self.h_t, h_s=self.h_s, k_e=self.k_e, k_d=self.k_d,
            activation=self.activation, dropout=self.dropout, cell=self.cell,
            embedding=embedding, variant=VARIANTS[self.variant],
        )

    def fit(self, dataset: ForecastDataset, stack: AdjacencyStack):
        config = self.model_config()
        network = ForecastNetwork(config, n=stack.n,
                                  l=config.variant.l_dim, seed=self.seed)
        self.network_, self.loss_curve_ = train(
            network, dataset, stack,
            TrainConfig(lr=self.lr, decay=self.decay, dropout=self.dropout,
                        batch_size=self.batch_size, epochs=self.epochs,
                        seed=self.seed, stop_below=self.stop_below),
        )
        return self

    def predict(self, dataset: ForecastDataset,
                stack: AdjacencyStack) -> np.ndarray:
        if not hasattr(self, "network_"):
            raise ModelError("DemandForecaster.predict called before fit")
        return np.stack([
            self.network_.predict(s.features, s.encoding, stack)
            for s in dataset.samples
        ])
