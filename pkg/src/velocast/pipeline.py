"""Training loop, metrics, weather scenarios, and comparison reports.

Samples are whole timestamps: one sample couples a standardized [N, L]
feature matrix, a calendar encoding, and the raw [N] demand target. Test
windows keep only the 7:00-21:00 hours (the service day); training uses
every hour. A scenario is a weather predicate over test hours (rainy,
dry, wet-day bands); metrics per (variant, scenario) land in one report.

MAPE here averages |pred - actual| / actual over entries with actual > 0;
zero-demand entries are excluded and their share is reported separately.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import NonFiniteError, PipelineError
from .features import (
    CalendarTable, FeatureSpec, ODDemandPanel, PanelScaler, WeatherSeries,
    ZoneFlowSeries, assemble_features, encode_calendar,
)
from .graphs import AdjacencyStack
from .model import ForecastNetwork
from .numerics import Adam, Tape, Tensor, reduce_mean, scale, square, sub

__all__ = [
    "TrainConfig", "SplitSpec", "Sample", "ForecastDataset", "build_dataset",
    "train", "mse", "mape", "ScenarioFilter", "standard_scenarios",
    "apply_scenario", "EvaluationEntry", "MetricsReport", "evaluate",
    "TEST_DAY_HOURS",
]

TEST_DAY_HOURS = (7, 21)  # inclusive service-day bounds for test windows
MIN_HISTORY = 168  # hours of lag history a sample needs


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the defaults are the reference setup."""

    lr: float = 5e-5
    decay: float = 1e-6
    dropout: float = 0.7
    batch_size: int = 16
    epochs: int = 80
    seed: int = 0
    stop_below: float | None = None  # optional early stop on train MSE

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise PipelineError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise PipelineError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class SplitSpec:
    """Hour-index windows [lo, hi) into the panel grid."""

    train: tuple[int, int]
    test: tuple[int, int]

    def __post_init__(self):
        for name, (lo, hi) in (("train", self.train), ("test", self.test)):
            if lo >= hi:
                raise PipelineError(f"{name} window {lo}..{hi} is empty")
        if max(self.train[0], self.test[0]) < min(self.train[1], self.test[1]):
            raise PipelineError(
                f"train {self.train} and test {self.test} windows overlap"
            )


@dataclass
class Sample:
    t: int
    ts: datetime
    features: np.ndarray  # standardized [N, L]
    encoding: object | None  # CalendarEncoding when the variant embeds time
    target: np.ndarray  # raw counts [N]


@dataclass
class ForecastDataset:
    spec: FeatureSpec
    samples: list[Sample]
    scaler: PanelScaler

    def __len__(self) -> int:
        return len(self.samples)


def usable_timestamps(window: tuple[int, int], grid_hours: np.ndarray,
                      day_hours: tuple[int, int] | None = None) -> list[int]:
    """Window timestamps with full lag history, optionally restricted to
    the service-day hour band."""
    lo, hi = window
    out = []
    for t in range(max(lo, MIN_HISTORY), hi):
        if day_hours is not None:
            hour = int(grid_hours[t])
            if not day_hours[0] <= hour <= day_hours[1]:
                continue
        out.append(t)
    return out


def build_dataset(spec: FeatureSpec, panel: ODDemandPanel,
                  weather: WeatherSeries | None, flows: ZoneFlowSeries | None,
                  calendar: CalendarTable | None, window: tuple[int, int],
                  scaler: PanelScaler | None = None,
                  day_hours: tuple[int, int] | None = None) -> ForecastDataset:
    """Assemble one sample per usable timestamp in the window.

    Pass scaler=None for a training window: the scaler is fit on this
    window's feature rows. Pass the fitted scaler for a test window so
    test features reuse training statistics. Targets stay raw counts.
    """
    hours = panel.grid.hours()
    ts_list = usable_timestamps(window, hours, day_hours)
    if not ts_list:
        raise PipelineError(
            f"window {window} has no usable timestamps (needs "
            f"{MIN_HISTORY}h of history)"
        )
    raw = [assemble_features(spec, panel, weather, flows, t) for t in ts_list]
    if scaler is None:
        scaler = PanelScaler().fit(np.concatenate([fm.x for fm in raw]))
    samples = []
    for t, fm in zip(ts_list, raw):
        enc = None
        if spec.embedding:
            if calendar is None:
                raise PipelineError(
                    f"variant {spec.variant} needs a calendar table"
                )
            enc = encode_calendar(panel.grid.timestamp(t), calendar)
        samples.append(Sample(
            t=t, ts=panel.grid.timestamp(t),
            features=scaler.transform(fm.x),
            encoding=enc, target=panel.counts[t].copy(),
        ))
    return ForecastDataset(spec, samples, scaler)


def train(network: ForecastNetwork, dataset: ForecastDataset,
          stack: AdjacencyStack,
          config: TrainConfig) -> tuple[ForecastNetwork, list[float]]:
    """Mini-batch MSE training; returns the network and per-epoch losses.

    Batches are whole timestamps, reshuffled each epoch from a seeded
    generator, so a (seed, config, data) triple fixes the entire run.
    """
    if network.config.variant.variant != dataset.spec.variant:
        raise PipelineError(
            f"network variant {network.config.variant.variant} does not "
            f"match dataset variant {dataset.spec.variant}"
        )
    params = network.params()
    opt = Adam(params, lr=config.lr, decay=config.decay)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    n = len(dataset.samples)
    curve: list[float] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_sum = 0.0
        for b_start in range(0, n, config.batch_size):
            batch = [dataset.samples[i] for i in order[b_start:b_start
                                                       + config.batch_size]]
            try:
                with Tape() as tape:
                    total = None
                    for sample in batch:
                        out = network.forward(
                            sample.features, sample.encoding, stack,
                            training=True, rng=dropout_rng,
                        )
                        err = sub(out, Tensor(sample.target.reshape(-1, 1)))
                        loss_i = reduce_mean(square(err))
                        total = loss_i if total is None else total + loss_i
                    batch_loss = scale(total, 1.0 / len(batch))
                grads = tape.gradient(batch_loss, params)
                opt.step(grads)
            except NonFiniteError as exc:
                raise PipelineError(
                    f"non-finite loss at epoch {epoch}, batch "
                    f"{b_start // config.batch_size}: {exc}"
                )
            epoch_sum += batch_loss.item() * len(batch)
        epoch_loss = epoch_sum / n
        curve.append(epoch_loss)
        if config.stop_below is not None and epoch_loss < config.stop_below:
            break
    return network, curve


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def mse(predictions: np.ndarray, actuals: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    if predictions.shape != actuals.shape:
        raise PipelineError(
            f"shape mismatch {predictions.shape} vs {actuals.shape}"
        )
    if predictions.size == 0:
        raise PipelineError("mse of an empty set")
    return float(np.mean((predictions - actuals) ** 2))


def mape(predictions: np.ndarray, actuals: np.ndarray) -> float:
    """Mean |pred-actual|/actual over entries with actual > 0 only."""
    predictions = np.asarray(predictions, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    if predictions.shape != actuals.shape:
        raise PipelineError(
            f"shape mismatch {predictions.shape} vs {actuals.shape}"
        )
    mask = actuals > 0
    if not mask.any():
        raise PipelineError("mape needs at least one nonzero actual")
    return float(np.mean(np.abs(predictions[mask] - actuals[mask])
                         / actuals[mask]))


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioFilter:
    """Weather predicate over test hours.

    signal "none" keeps everything; "hr" tests the forecast hour's
    rainfall; "dcr" tests its calendar day's total. Bounds select
    lo < value <= hi (None = unbounded); eq selects value == eq.
    """

    id: str
    signal: str = "none"
    eq: float | None = None
    lo: float | None = None
    hi: float | None = None

    def keep(self, weather: WeatherSeries, t: int) -> bool:
        if self.signal == "none":
            return True
        value = weather.value(self.signal, t)
        if self.eq is not None:
            return value == self.eq
        if self.lo is not None and not value > self.lo:
            return False
        if self.hi is not None and not value <= self.hi:
            return False
        return True


def standard_scenarios() -> list[ScenarioFilter]:
    """The reporting set: whole test window, rain/no-rain split on the
    hour, an intense-rain band, and daily-cumulative-rain bands."""
    return [
        ScenarioFilter("always"),
        ScenarioFilter("hr=0", "hr", eq=0.0),
        ScenarioFilter("hr>0", "hr", lo=0.0),
        ScenarioFilter("hr>1", "hr", lo=1.0),
        ScenarioFilter("dcr=0", "dcr", eq=0.0),
        ScenarioFilter("dcr(0,1]", "dcr", lo=0.0, hi=1.0),
        ScenarioFilter("dcr(1,3]", "dcr", lo=1.0, hi=3.0),
    ]


def apply_scenario(samples: list[Sample], weather: WeatherSeries,
                   filt: ScenarioFilter) -> tuple[list[int], dict]:
    """Indices of samples passing the predicate, plus subset stats."""
    kept = [i for i, s in enumerate(samples) if filt.keep(weather, s.t)]
    if kept:
        targets = np.concatenate([samples[i].target for i in kept])
        zero_fraction = float(np.mean(targets == 0))
    else:
        zero_fraction = float("nan")
    return kept, {"hours": len(kept), "zero_fraction": zero_fraction}


# ---------------------------------------------------------------------------
# evaluation and reports
# ---------------------------------------------------------------------------

@dataclass
class EvaluationEntry:
    variant: str
    network: ForecastNetwork
    stack: AdjacencyStack
    dataset: ForecastDataset


@dataclass
class MetricsReport:
    """Rows of (variant, scenario, mse, mape, hours, zero_fraction)."""

    rows: list[dict] = field(default_factory=list)
    note: str = ("MAPE excludes zero-actual entries; their share is the "
                 "zero_fraction column.")

    CSV_COLUMNS = ("variant", "scenario", "mse", "mape", "hours",
                   "zero_fraction")

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# {self.note}\n")
            writer = csv.writer(fh)
            writer.writerow(self.CSV_COLUMNS)
            for row in self.rows:
                writer.writerow([
                    row["variant"], row["scenario"],
                    _fmt_float(row["mse"]), _fmt_float(row["mape"]),
                    row["hours"], _fmt_float(row["zero_fraction"]),
                ])

    def scenario_ids(self) -> list[str]:
        seen = []
        for row in self.rows:
            if row["scenario"] not in seen:
                seen.append(row["scenario"])
        return seen

    def to_text(self) -> str:
        """Aligned tables: one overall block, then per-scenario blocks
        grouped by variant family."""
        lines = [self.note, ""]
        for scenario in self.scenario_ids():
            rows = [r for r in self.rows if r["scenario"] == scenario]
            lines.append(f"scenario: {scenario}  "
                         f"(hours={rows[0]['hours']}, "
                         f"zero_fraction={_fmt_float(rows[0]['zero_fraction'])})")
            header = f"  {'variant':<10}{'mse':>12}{'mape':>12}"
            lines.append(header)
            lines.append("  " + "-" * (len(header) - 2))
            for family in ("X", "T", "W", "I", "WIT"):
                members = [r for r in rows if _family(r["variant"]) == family]
                for r in members:
                    lines.append(
                        f"  {r['variant']:<10}"
                        f"{_fmt_float(r['mse']):>12}{_fmt_float(r['mape']):>12}"
                    )
            lines.append("")
        return "\n".join(lines)


def _family(variant: str) -> str:
    if variant in ("X", "T", "WIT"):
        return variant
    return variant[0]


def _fmt_float(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "-"
    return f"{value:.6f}"


def evaluate(entries: list[EvaluationEntry], weather: WeatherSeries,
             scenarios: list[ScenarioFilter] | None = None,
             dump_dir: str | None = None) -> MetricsReport:
    """Inference every entry once, then slice metrics per scenario.

    With dump_dir set, per-variant prediction CSVs
    (`ts,od_index,actual,predicted`) are written for external recomputation.
    """
    if scenarios is None:
        scenarios = standard_scenarios()
    report = MetricsReport()
    for entry in entries:
        if entry.network.config.variant.variant != entry.dataset.spec.variant:
            raise PipelineError(
                f"entry {entry.variant}: network variant "
                f"{entry.network.config.variant.variant} does not match "
                f"dataset variant {entry.dataset.spec.variant}"
            )
        samples = entry.dataset.samples
        preds = [entry.network.predict(s.features, s.encoding, entry.stack)
                 for s in samples]
        if dump_dir is not None:
            _dump_predictions(dump_dir, entry.variant, samples, preds)
        for filt in scenarios:
            kept, stats = apply_scenario(samples, weather, filt)
            if kept:
                p = np.stack([preds[i] for i in kept])
                a = np.stack([samples[i].target for i in kept])
                row_mse = mse(p, a)
                row_mape = mape(p, a) if (a > 0).any() else None
            else:
                row_mse = row_mape = None
            report.rows.append({
                "variant": entry.variant, "scenario": filt.id,
                "mse": row_mse, "mape": row_mape,
                "hours": stats["hours"],
                "zero_fraction": stats["zero_fraction"],
            })
    return report


def _dump_predictions(dump_dir: str, variant: str, samples: list[Sample],
                      preds: list[np.ndarray]) -> None:
    os.makedirs(dump_dir, exist_ok=True)
    path = os.path.join(dump_dir, f"predictions_{variant}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts", "od_index", "actual", "predicted"])
        for sample, pred in zip(samples, preds):
            for k in range(pred.shape[0]):
                writer.writerow([
                    sample.ts.isoformat(), k,
                    repr(float(sample.target[k])), repr(float(pred[k])),
                ])
