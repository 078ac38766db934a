"""The seven pipeline stages and their artifact manifest.

Each stage reads declared inputs, writes outputs under the run's output
directory, and records sha256 digests in manifest.json. Consuming a file
that a previous stage produced re-hashes it first: a mismatch means
someone edited or regenerated it, and the run stops with a stale-artifact
error instead of silently mixing generations. Missing inputs name the
stage that produces them.

Every stage is deterministic given (config, inputs), so re-running with
nothing changed rewrites byte-identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from datetime import datetime

import numpy as np

from .config import RunConfig, config_hash
from .errors import ArtifactError, DataError
from .features import (
    VARIANTS, HourGrid, ODDemandPanel, PanelScaler, WeatherSeries,
    ZoneFlowSeries, aggregate_flow_by_zone, assemble_features,
    clean_loop_data, filter_top_ods, load_calendar_csv, load_loop_csv,
    load_loop_zone_map_csv, load_trips_csv, load_weather_csv,
    trips_to_panel,
)
from .geo import (
    Station, aggregate_to, assign_stations, load_partition, load_stations,
    save_merge_tree, save_partition,
)
from .graphs import MATRIX_NAMES, ODPair, build_stack, load_stack, save_stack
from .model import ForecastNetwork, load_model, save_model
from .pipeline import (
    EvaluationEntry, MetricsReport, build_dataset, evaluate, train,
    usable_timestamps,
)
from .serialize import load_arrays, save_arrays
from .synth import write_dataset

__all__ = ["STAGES", "Workspace", "run_stage", "file_digest",
           "load_manifest"]

STAGES = ("synth", "aggregate", "graphs", "featurize", "train", "eval",
          "report")

_DATA_FILES = {
    "zones": "zones.geojson", "stations": "stations.csv",
    "trips": "trips.csv", "weather": "weather.csv", "loops": "loops.csv",
    "loop_zones": "loop_zones.csv", "calendar": "calendar.csv",
    "truth": "truth.json",
}


class Workspace:
    """Path layout of one run directory."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.root = config.out_dir
        self.data_dir = os.path.join(self.root, "data")
        self.models_dir = os.path.join(self.root, "models")
        self.predictions_dir = os.path.join(self.root, "predictions")
        self.stack_dir = os.path.join(self.root, "stack")
        self.manifest_path = os.path.join(self.root, "manifest.json")

    def input_path(self, name: str) -> str:
        """User-supplied files win over synth-stage outputs."""
        if name in self.config.inputs:
            return self.config.inputs[name]
        return os.path.join(self.data_dir, _DATA_FILES[name])

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def model_path(self, variant: str) -> str:
        return os.path.join(self.models_dir, f"model_{variant}.npz")

    def curve_path(self, variant: str) -> str:
        return os.path.join(self.models_dir, f"curve_{variant}.csv")

    def prediction_path(self, variant: str) -> str:
        return os.path.join(self.predictions_dir,
                            f"predictions_{variant}.csv")


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_manifest(ws: Workspace) -> dict:
    if not os.path.exists(ws.manifest_path):
        return {}
    with open(ws.manifest_path) as fh:
        return json.load(fh)


def _save_manifest(ws: Workspace, manifest: dict) -> None:
    os.makedirs(ws.root, exist_ok=True)
    with open(ws.manifest_path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)


def _record(ws: Workspace, stage: str, inputs: list[str],
            outputs: list[str]) -> None:
    manifest = load_manifest(ws)
    manifest[stage] = {
        "config_hash": config_hash(ws.config),
        "inputs": {p: file_digest(p) for p in sorted(inputs)},
        "outputs": {p: file_digest(p) for p in sorted(outputs)},
    }
    _save_manifest(ws, manifest)


def _producer_of(manifest: dict, path: str) -> str | None:
    for stage, entry in manifest.items():
        if path in entry.get("outputs", {}):
            return stage
    return None


def _require(ws: Workspace, paths: list[str], producer: str) -> None:
    """Every path must exist and match the digest its producing stage
    recorded."""
    manifest = load_manifest(ws)
    supplied = set(ws.config.inputs.values())
    for path in paths:
        if not os.path.exists(path):
            if path in supplied:
                name = next(k for k, v in ws.config.inputs.items()
                            if v == path)
                raise ArtifactError(
                    f"input file {path} (config key inputs.{name}) does "
                    "not exist"
                )
            raise ArtifactError(
                f"{path} is missing; run the '{producer}' stage first"
            )
        recorded_by = _producer_of(manifest, path)
        if recorded_by is not None:
            recorded = manifest[recorded_by]["outputs"][path]
            if file_digest(path) != recorded:
                raise ArtifactError(
                    f"{path} changed since the '{recorded_by}' stage "
                    f"produced it; re-run '{recorded_by}'"
                )


# ---------------------------------------------------------------------------
# stage bodies
# ---------------------------------------------------------------------------

def run_synth(config: RunConfig) -> list[str]:
    ws = Workspace(config)
    paths = write_dataset(config.synth, ws.data_dir)
    outputs = sorted(paths.values())
    _record(ws, "synth", [], outputs)
    return outputs


def run_aggregate(config: RunConfig) -> list[str]:
    ws = Workspace(config)
    zones_path = ws.input_path("zones")
    stations_path = ws.input_path("stations")
    _require(ws, [zones_path, stations_path], "synth")
    partition = load_partition(zones_path)
    merged = aggregate_to(partition, config.n_zones)
    stations = assign_stations(merged, load_stations(stations_path))
    out_partition = ws.path("partition.geojson")
    out_tree = ws.path("merge_tree.json")
    out_stations = ws.path("stations_assigned.csv")
    save_partition(merged, out_partition)
    save_merge_tree(merged, out_tree)
    with open(out_stations, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "x", "y", "zone_id"])
        for st in stations:
            writer.writerow([st.id, repr(float(st.x)), repr(float(st.y)),
                             st.zone_id])
    outputs = [out_partition, out_tree, out_stations]
    _record(ws, "aggregate", [zones_path, stations_path], outputs)
    return outputs


def _load_assigned_stations(path: str) -> list[Station]:
    stations = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            stations.append(Station(row["station_id"], float(row["x"]),
                                    float(row["y"]), row["zone_id"]))
    return stations


def run_graphs(config: RunConfig) -> list[str]:
    """Bin trips to the aggregated zones, keep the p_bike OD roster, and
    build the seven-graph stack from training-window demand only."""
    ws = Workspace(config)
    trips_path = ws.input_path("trips")
    partition_path = ws.path("partition.geojson")
    stations_path = ws.path("stations_assigned.csv")
    _require(ws, [trips_path], "synth")
    _require(ws, [partition_path, stations_path], "aggregate")
    partition = load_partition(partition_path)
    stations = _load_assigned_stations(stations_path)
    grid = config.synth.grid()
    panel_all = trips_to_panel(load_trips_csv(trips_path), stations,
                               partition, grid)
    selected = filter_top_ods(panel_all, config.p_bike, config.day_window)
    panel = panel_all.restrict(selected)
    train_lo, train_hi = config.train_window
    stack = build_stack(panel.od_pairs, partition,
                        panel.counts[train_lo:train_hi])
    save_stack(stack, ws.stack_dir)
    panel_path = ws.path("panel.npz")
    save_arrays(panel_path, {"counts": panel.counts}, {
        "format": "velocast-panel", "start": grid.start.isoformat(),
        "hours": len(grid),
        "od_pairs": [[p.origin_zone, p.dest_zone] for p in panel.od_pairs],
    })
    outputs = [panel_path, os.path.join(ws.stack_dir, "manifest.json")]
    outputs += [os.path.join(ws.stack_dir, f"{name}.npy")
                for name in MATRIX_NAMES]
    _record(ws, "graphs", [trips_path, partition_path, stations_path],
            outputs)
    return outputs


def _load_panel(path: str):
    meta, arrays = load_arrays(path)
    if meta.get("format") != "velocast-panel":
        raise ArtifactError(f"{path}: not a demand panel artifact")
    grid = HourGrid(datetime.fromisoformat(meta["start"]), meta["hours"])
    od_pairs = [ODPair(i, o, d)
                for i, (o, d) in enumerate(meta["od_pairs"])]
    return ODDemandPanel(grid, od_pairs, arrays["counts"])


def run_featurize(config: RunConfig) -> list[str]:
    """Freeze model inputs: validated weather, cleaned zone flows, and a
    per-variant feature scaler fitted on the training window."""
    ws = Workspace(config)
    panel_path = ws.path("panel.npz")
    weather_path = ws.input_path("weather")
    loops_path = ws.input_path("loops")
    loop_zones_path = ws.input_path("loop_zones")
    calendar_path = ws.input_path("calendar")
    _require(ws, [panel_path], "graphs")
    _require(ws, [weather_path, loops_path, loop_zones_path, calendar_path],
             "synth")
    panel = _load_panel(panel_path)
    grid = panel.grid
    weather = load_weather_csv(weather_path, grid)
    loop_map = load_loop_zone_map_csv(loop_zones_path)
    per_loop = clean_loop_data(load_loop_csv(loops_path), grid)
    flows = aggregate_flow_by_zone(per_loop, loop_map, grid)
    calendar = load_calendar_csv(calendar_path)
    for day in sorted(set(grid.dates())):
        calendar.get(day)  # raises DataError naming the uncovered date

    arrays = {"hr": weather.hr, "hd": weather.hd, "flows": flows.flows}
    train_ts = usable_timestamps(config.train_window, grid.hours())
    if not train_ts:
        raise DataError(
            f"training window {config.train_window} has no usable "
            "timestamps; extend train_days"
        )
    for variant in config.variants:
        spec = VARIANTS[variant]
        rows = np.concatenate([
            assemble_features(spec, panel, weather, flows, t).x
            for t in train_ts
        ])
        scaler = PanelScaler().fit(rows)
        arrays[f"scaler_{variant}_mean"] = scaler.mean_
        arrays[f"scaler_{variant}_scale"] = scaler.scale_
    context_path = ws.path("context.npz")
    save_arrays(context_path, arrays, {
        "format": "velocast-context",
        "zone_ids": flows.zone_ids,
        "variants": list(config.variants),
        "train_window": list(config.train_window),
    })
    _record(ws, "featurize",
            [panel_path, weather_path, loops_path, loop_zones_path,
             calendar_path], [context_path])
    return [context_path]


def _load_context(path: str, grid: HourGrid):
    meta, arrays = load_arrays(path)
    if meta.get("format") != "velocast-context":
        raise ArtifactError(f"{path}: not a feature-context artifact")
    weather = WeatherSeries(grid, arrays["hr"], arrays["hd"])
    flows = ZoneFlowSeries(grid, list(meta["zone_ids"]), arrays["flows"])
    scalers = {}
    for variant in meta["variants"]:
        scaler = PanelScaler()
        scaler.mean_ = arrays[f"scaler_{variant}_mean"]
        scaler.scale_ = arrays[f"scaler_{variant}_scale"]
        scalers[variant] = scaler
    return weather, flows, scalers


def _variant_dataset(config: RunConfig, variant: str, panel, weather, flows,
                     calendar, window, scaler, day_hours=None):
    return build_dataset(VARIANTS[variant], panel, weather, flows, calendar,
                         window, scaler=scaler, day_hours=day_hours)


def run_train(config: RunConfig) -> list[str]:
    ws = Workspace(config)
    panel_path = ws.path("panel.npz")
    context_path = ws.path("context.npz")
    stack_manifest = os.path.join(ws.stack_dir, "manifest.json")
    calendar_path = ws.input_path("calendar")
    _require(ws, [panel_path, stack_manifest], "graphs")
    _require(ws, [context_path], "featurize")
    _require(ws, [calendar_path], "synth")
    panel = _load_panel(panel_path)
    stack = load_stack(ws.stack_dir)
    weather, flows, scalers = _load_context(context_path, panel.grid)
    calendar = load_calendar_csv(calendar_path)
    os.makedirs(ws.models_dir, exist_ok=True)
    outputs = []
    for variant in config.variants:
        ds = _variant_dataset(config, variant, panel, weather, flows,
                              calendar, config.train_window,
                              scalers[variant])
        model_config = config.model.to_model_config(
            variant, config.train.dropout)
        network = ForecastNetwork(model_config, n=stack.n,
                                  l=VARIANTS[variant].l_dim,
                                  seed=config.seed)
        network, curve = train(network, ds, stack, config.train)
        model_path = ws.model_path(variant)
        save_model(network, model_path, scalers[variant].mean_,
                   scalers[variant].scale_)
        curve_path = ws.curve_path(variant)
        with open(curve_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_mse"])
            for epoch, loss in enumerate(curve):
                writer.writerow([epoch, repr(float(loss))])
        outputs += [model_path, curve_path]
    _record(ws, "train",
            [panel_path, context_path, stack_manifest, calendar_path],
            outputs)
    return outputs


def run_eval(config: RunConfig) -> list[str]:
    ws = Workspace(config)
    panel_path = ws.path("panel.npz")
    context_path = ws.path("context.npz")
    stack_manifest = os.path.join(ws.stack_dir, "manifest.json")
    calendar_path = ws.input_path("calendar")
    model_paths = [ws.model_path(v) for v in config.variants]
    _require(ws, [panel_path, stack_manifest], "graphs")
    _require(ws, [context_path], "featurize")
    _require(ws, model_paths, "train")
    _require(ws, [calendar_path], "synth")
    panel = _load_panel(panel_path)
    stack = load_stack(ws.stack_dir)
    weather, flows, _ = _load_context(context_path, panel.grid)
    calendar = load_calendar_csv(calendar_path)
    lo, hi = config.day_window
    entries = []
    for variant in config.variants:
        network, scaler_arrays = load_model(ws.model_path(variant))
        scaler = PanelScaler()
        scaler.mean_ = scaler_arrays["mean"]
        scaler.scale_ = scaler_arrays["scale"]
        ds = _variant_dataset(config, variant, panel, weather, flows,
                              calendar, config.test_window, scaler,
                              day_hours=(lo, hi))
        entries.append(EvaluationEntry(variant, network, stack, ds))
    report = evaluate(entries, weather, dump_dir=ws.predictions_dir)
    metrics_path = ws.path("metrics.csv")
    report.to_csv(metrics_path)
    outputs = [metrics_path]
    outputs += [ws.prediction_path(v) for v in config.variants]
    _record(ws, "eval",
            [panel_path, context_path, stack_manifest, calendar_path]
            + model_paths, outputs)
    return outputs


def _read_metrics(path: str) -> MetricsReport:
    report = MetricsReport()
    with open(path) as fh:
        note = fh.readline().strip()
        if note.startswith("# "):
            report.note = note[2:]
            rows = csv.DictReader(fh)
        else:
            fh.seek(0)
            rows = csv.DictReader(fh)
        for row in rows:
            report.rows.append({
                "variant": row["variant"],
                "scenario": row["scenario"],
                "mse": None if row["mse"] == "-" else float(row["mse"]),
                "mape": None if row["mape"] == "-" else float(row["mape"]),
                "hours": int(row["hours"]),
                "zero_fraction": float("nan")
                if row["zero_fraction"] == "-"
                else float(row["zero_fraction"]),
            })
    return report


def run_report(config: RunConfig) -> list[str]:
    ws = Workspace(config)
    metrics_path = ws.path("metrics.csv")
    _require(ws, [metrics_path], "eval")
    report = _read_metrics(metrics_path)
    text = report.to_text()
    report_path = ws.path("report.txt")
    with open(report_path, "w") as fh:
        fh.write(text)
    _record(ws, "report", [metrics_path], [report_path])
    return [report_path]


_RUNNERS = {
    "synth": run_synth, "aggregate": run_aggregate, "graphs": run_graphs,
    "featurize": run_featurize, "train": run_train, "eval": run_eval,
    "report": run_report,
}


def run_stage(name: str, config: RunConfig) -> list[str]:
    if name not in _RUNNERS:
        raise ArtifactError(
            f"unknown stage {name!r}; stages are {', '.join(STAGES)}"
        )
    return _RUNNERS[name](config)
