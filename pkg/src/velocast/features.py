"""Raw records to model inputs: demand panels, lags, context signals.

The hourly grid is the shared time axis. A demand panel counts trips per
(hour, OD pair); feature matrices stack, per OD row, four demand lags
(one week, one day, two hours, one hour back) followed by the variant's
weather and car-flow terms. Offsets are hours relative to the forecast
hour t: offset <= 0 reads the past, offset > 0 reads the recorded future
as a perfect-forecast stand-in.

Variant roster (context columns beyond the four lags):

    X    none                         T    calendar embedding only
    W1   hr@t-1                       I1   flow@t-1
    W2   hr@t-2, hr@t-1               I2   flow@t-2, flow@t-1
    W3   hr@t-3..t-1                  I3   flow@t
    W4   hr@t                         I4   flow@t-1, flow@t
    W5   hr@t-1, hr@t                 I5   flow@t-2..t
    W6   hr@t-1, hd@t-1
    W7   hr@t, hd@t
    WIT  hr@t-1, hr@t, hr@t+1, flow@t-1, flow@t, embedding

hr is rainfall mm/h, hd minutes of rain in the hour, dcr the day's total
rainfall; flow is vehicles/h in the OD's origin zone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Iterable, NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DataError
from .geo import Station, ZonePartition
from .graphs import ODPair, all_od_pairs

__all__ = [
    "HourGrid", "Trip", "LoopRecord", "ODDemandPanel", "WeatherSeries",
    "ZoneFlowSeries", "CalendarTable", "CalendarEncoding", "FeatureSpec",
    "FeatureMatrix", "VARIANTS", "PERIODS_PER_HOUR", "trips_to_panel",
    "filter_top_ods", "build_lags", "clean_loop_data",
    "aggregate_flow_by_zone", "interpolate_gaps", "encode_calendar",
    "assemble_features", "PanelScaler", "load_trips_csv", "load_loop_csv",
    "load_weather_csv", "load_calendar_csv", "load_loop_zone_map_csv",
    "LAG_OFFSETS", "CALENDAR_SIZES",
]

LAG_OFFSETS = (-168, -24, -2, -1)  # one week, one day, two hours, one hour
LAG_NAMES = ("lag_168h", "lag_24h", "lag_2h", "lag_1h")
PERIODS_PER_HOUR = 10  # 6-minute sensor periods
CALENDAR_SIZES = (18, 7, 2, 2, 2, 2)


def parse_ts(value: str | datetime, what: str = "timestamp") -> datetime:
    if isinstance(value, datetime):
        return value
    try:
        return datetime.fromisoformat(value)
    except (TypeError, ValueError):
        raise DataError(f"{what}: {value!r} is not an ISO-8601 timestamp")


@dataclass(frozen=True)
class HourGrid:
    """Gapless hourly time axis: `count` hours starting at `start`."""

    start: datetime
    count: int

    def __post_init__(self):
        if self.start.minute or self.start.second or self.start.microsecond:
            raise DataError(f"grid start {self.start} is not on the hour")
        if self.count < 1:
            raise DataError("grid needs at least one hour")

    def __len__(self) -> int:
        return self.count

    def timestamp(self, idx: int) -> datetime:
        if not 0 <= idx < self.count:
            raise DataError(f"hour index {idx} outside grid of {self.count}")
        return self.start + timedelta(hours=idx)

    def index(self, ts: datetime) -> int:
        delta = ts - self.start
        seconds = delta.days * 86400 + delta.seconds
        if seconds % 3600 or delta.microseconds:
            raise DataError(f"{ts} is not on the hourly grid")
        idx = seconds // 3600
        if not 0 <= idx < self.count:
            raise DataError(
                f"{ts} outside grid [{self.start} .. "
                f"{self.timestamp(self.count - 1)}]"
            )
        return idx

    def index_of_hour_containing(self, ts: datetime) -> int:
        return self.index(ts.replace(minute=0, second=0, microsecond=0))

    def hours(self) -> np.ndarray:
        """Hour-of-day per grid slot."""
        first = self.start.hour
        return (first + np.arange(self.count)) % 24

    def dates(self) -> list[date]:
        return [self.timestamp(i).date() for i in range(self.count)]


class Trip(NamedTuple):
    departure: datetime
    origin_station: str
    dest_station: str


class LoopRecord(NamedTuple):
    ts: datetime
    loop_id: str
    flow: float | None
    occupancy: float


@dataclass
class ODDemandPanel:
    """Hourly trip counts, one column per OD pair."""

    grid: HourGrid
    od_pairs: list[ODPair]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        want = (len(self.grid), len(self.od_pairs))
        if self.counts.shape != want:
            raise DataError(
                f"panel counts shape {self.counts.shape}, expected {want}"
            )
        if np.any(self.counts < 0) or np.any(self.counts != np.round(self.counts)):
            raise DataError("panel counts must be non-negative integers")

    @property
    def n(self) -> int:
        return len(self.od_pairs)

    def restrict(self, selected: list[ODPair]) -> "ODDemandPanel":
        """Keep only the given ODs, reindexed densely in the given order."""
        cols = [p.index for p in selected]
        roster = [
            ODPair(i, p.origin_zone, p.dest_zone) for i, p in enumerate(selected)
        ]
        return ODDemandPanel(self.grid, roster, self.counts[:, cols].copy())


def trips_to_panel(trips: Iterable[Trip], stations: list[Station],
                   partition: ZonePartition, grid: HourGrid) -> ODDemandPanel:
    """Count each trip at (hour of departure, (origin zone, dest zone)).

    Trips that start and end in the same zone are discarded: the model
    predicts flows between distinct zones only.
    """
    station_zone = {}
    for st in stations:
        if st.zone_id is None:
            raise DataError(f"station {st.id!r} has no zone assignment")
        station_zone[st.id] = st.zone_id
    od_pairs = all_od_pairs(partition)
    index = {(p.origin_zone, p.dest_zone): p.index for p in od_pairs}
    counts = np.zeros((len(grid), len(od_pairs)))
    for trip in trips:
        try:
            o_zone = station_zone[trip.origin_station]
        except KeyError:
            raise DataError(f"unknown origin station {trip.origin_station!r}")
        try:
            d_zone = station_zone[trip.dest_station]
        except KeyError:
            raise DataError(f"unknown destination station {trip.dest_station!r}")
        if o_zone == d_zone:
            continue
        t = grid.index_of_hour_containing(trip.departure)
        counts[t, index[(o_zone, d_zone)]] += 1
    return ODDemandPanel(grid, od_pairs, counts)


def filter_top_ods(panel: ODDemandPanel, p_bike: float,
                   day_window: tuple[int, int] = (7, 21)) -> list[ODPair]:
    """Shortest demand-descending prefix of ODs reaching the p_bike share.

    Demand is totaled inside the daily hour window (inclusive bounds);
    ties between equal totals keep the lower OD index first.
    """
    if not 0.0 < p_bike <= 1.0:
        raise DataError(f"p_bike must be in (0, 1], got {p_bike}")
    lo, hi = day_window
    hours = panel.grid.hours()
    in_window = (hours >= lo) & (hours <= hi)
    totals = panel.counts[in_window].sum(axis=0)
    grand = totals.sum()
    if grand == 0:
        raise DataError("panel has no demand inside the daily window")
    # counts are integers, so the shares below are exact in float64
    order = sorted((k for k in range(panel.n) if totals[k] > 0),
                   key=lambda k: (-totals[k], k))
    kept, cum = [], 0.0
    for k in order:
        kept.append(panel.od_pairs[k])
        cum += totals[k]
        if cum / grand >= p_bike:
            break
    return kept


def build_lags(panel: ODDemandPanel, t: int) -> np.ndarray:
    """[N, 4] of demand at t-168h, t-24h, t-2h, t-1h (in that order)."""
    earliest = -min(LAG_OFFSETS)
    if t < earliest:
        raise DataError(
            f"t={t} lacks lag history; earliest valid t is {earliest} "
            f"({panel.grid.timestamp(earliest)})"
        )
    if t >= len(panel.grid):
        raise DataError(f"t={t} outside grid of {len(panel.grid)} hours")
    return np.stack([panel.counts[t + k] for k in LAG_OFFSETS], axis=1)


# ---------------------------------------------------------------------------
# sensors and weather
# ---------------------------------------------------------------------------

def clean_loop_data(records: Iterable[LoopRecord],
                    grid: HourGrid) -> dict[str, np.ndarray]:
    """Per-loop hourly flow from 6-minute records; NaN marks dropped hours.

    A period is valid iff its flow is present and occupancy (fraction of
    time occupied, 0..1) is <= 0.5. An hour needs at least 5 of its 10
    periods valid; its flow is the valid sum scaled by 10/valid-count to
    a full-hour equivalent.
    """
    sums: dict[str, np.ndarray] = {}
    valid: dict[str, np.ndarray] = {}
    for rec in records:
        if rec.flow is None or (isinstance(rec.flow, float) and np.isnan(rec.flow)):
            continue
        if rec.occupancy > 0.5:
            continue
        t = grid.index_of_hour_containing(rec.ts)
        if rec.loop_id not in sums:
            sums[rec.loop_id] = np.zeros(len(grid))
            valid[rec.loop_id] = np.zeros(len(grid), dtype=int)
        sums[rec.loop_id][t] += float(rec.flow)
        valid[rec.loop_id][t] += 1
    hourly = {}
    for loop_id in sorted(sums):
        counts = valid[loop_id]
        out = np.full(len(grid), np.nan)
        keep = counts >= 5
        out[keep] = sums[loop_id][keep] * PERIODS_PER_HOUR / counts[keep]
        hourly[loop_id] = out
    return hourly


def interpolate_gaps(values: np.ndarray, name: str = "series") -> np.ndarray:
    """Fill NaN runs linearly between neighbors; edges copy the nearest
    value. An all-NaN series cannot be filled and is an error."""
    values = np.asarray(values, dtype=np.float64)
    ok = np.isfinite(values)
    if not ok.any():
        raise DataError(f"{name}: no valid values to interpolate from")
    if ok.all():
        return values.copy()
    idx = np.arange(values.size)
    return np.interp(idx, idx[ok], values[ok])


@dataclass
class ZoneFlowSeries:
    """Hourly vehicles/h per zone, gapless after interpolation."""

    grid: HourGrid
    zone_ids: list[str]
    flows: np.ndarray  # [hours, zones]

    def value(self, zone_id: str, idx: int, what: str = "flow") -> float:
        if zone_id not in self.zone_ids:
            raise DataError(f"{what}: no flow series for zone {zone_id!r}")
        if not 0 <= idx < len(self.grid):
            raise DataError(
                f"{what} at hour offset {idx}: outside recorded flows "
                f"(grid has {len(self.grid)} hours)"
            )
        return float(self.flows[idx, self.zone_ids.index(zone_id)])


def aggregate_flow_by_zone(per_loop: dict[str, np.ndarray],
                           loop_to_zone: dict[str, str],
                           grid: HourGrid) -> ZoneFlowSeries:
    """Sum valid loop hours per zone, then interpolate zone-hours where no
    loop reported. A zone whose loops never report at all is an error."""
    for loop_id in per_loop:
        if loop_id not in loop_to_zone:
            raise DataError(f"loop {loop_id!r} has no zone mapping")
    zone_ids = sorted(set(loop_to_zone.values()))
    flows = np.full((len(grid), len(zone_ids)), np.nan)
    for col, zone in enumerate(zone_ids):
        loops = sorted(l for l, z in loop_to_zone.items() if z == zone)
        series = [per_loop[l] for l in loops if l in per_loop]
        if series:
            stacked = np.stack(series)
            any_valid = np.isfinite(stacked).any(axis=0)
            sums = np.nansum(stacked, axis=0)
            flows[any_valid, col] = sums[any_valid]
        if not np.isfinite(flows[:, col]).any():
            raise DataError(
                f"zone {zone!r} has no reporting loop over the whole horizon"
            )
        flows[:, col] = interpolate_gaps(flows[:, col], f"zone {zone!r} flow")
    return ZoneFlowSeries(grid, zone_ids, flows)


@dataclass
class WeatherSeries:
    """Hourly rainfall intensity and duration, with daily totals derived.

    hr: mm/h; hd: minutes of rain within the hour (0..60); dcr: the
    calendar day's total rainfall, repeated on each of its hours.
    """

    grid: HourGrid
    hr: np.ndarray
    hd: np.ndarray
    dcr: np.ndarray = field(init=False)

    def __post_init__(self):
        self.hr = np.asarray(self.hr, dtype=np.float64)
        self.hd = np.asarray(self.hd, dtype=np.float64)
        for name, arr in (("hr", self.hr), ("hd", self.hd)):
            if arr.shape != (len(self.grid),):
                raise DataError(
                    f"{name} has {arr.shape[0] if arr.ndim else 0} hours, "
                    f"grid has {len(self.grid)}"
                )
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        if np.any(self.hr < 0):
            raise DataError("hr must be non-negative")
        if np.any(self.hd < 0) or np.any(self.hd > 60):
            raise DataError("hd must lie in [0, 60] minutes")
        days = np.array([d.toordinal() for d in self.grid.dates()])
        dcr = np.zeros(len(self.grid))
        for day in np.unique(days):
            mask = days == day
            dcr[mask] = self.hr[mask].sum()
        self.dcr = dcr

    def value(self, signal: str, idx: int) -> float:
        if signal not in ("hr", "hd", "dcr"):
            raise DataError(f"unknown weather signal {signal!r}")
        if not 0 <= idx < len(self.grid):
            raise DataError(
                f"{signal} at hour offset {idx}: outside recorded weather "
                f"(grid has {len(self.grid)} hours)"
            )
        return float(getattr(self, signal)[idx])


# ---------------------------------------------------------------------------
# calendar
# ---------------------------------------------------------------------------

@dataclass
class CalendarTable:
    """Per-date flags: business day, school holiday, departure/return day."""

    flags: dict[date, tuple[bool, bool, bool, bool]]

    def get(self, day: date) -> tuple[bool, bool, bool, bool]:
        try:
            return self.flags[day]
        except KeyError:
            raise DataError(f"calendar table does not cover {day.isoformat()}")


@dataclass
class CalendarEncoding:
    """Six one-hot vectors describing the forecast hour."""

    hour: np.ndarray            # 18 classes: 0 = night, 1..17 = 6:00..22:00
    weekday: np.ndarray         # 7
    business: np.ndarray        # 2
    school_holiday: np.ndarray  # 2
    holiday_departure: np.ndarray  # 2
    holiday_return: np.ndarray     # 2

    def vectors(self) -> list[np.ndarray]:
        return [self.hour, self.weekday, self.business, self.school_holiday,
                self.holiday_departure, self.holiday_return]

    def validate(self) -> None:
        for vec, size in zip(self.vectors(), CALENDAR_SIZES):
            if vec.shape != (size,):
                raise DataError(
                    f"calendar one-hot has shape {vec.shape}, expected ({size},)"
                )
            if vec.sum() != 1.0 or not np.all((vec == 0.0) | (vec == 1.0)):
                raise DataError("calendar vector is not one-hot")


def hour_class(hour: int) -> int:
    """6:00..22:00 map to classes 1..17; night hours collapse to class 0."""
    return hour - 5 if 6 <= hour <= 22 else 0


def _one_hot(size: int, index: int) -> np.ndarray:
    vec = np.zeros(size)
    vec[index] = 1.0
    return vec


def encode_calendar(ts: datetime, table: CalendarTable) -> CalendarEncoding:
    business, school, departure, retrn = table.get(ts.date())
    enc = CalendarEncoding(
        hour=_one_hot(18, hour_class(ts.hour)),
        weekday=_one_hot(7, ts.weekday()),
        business=_one_hot(2, int(business)),
        school_holiday=_one_hot(2, int(school)),
        holiday_departure=_one_hot(2, int(departure)),
        holiday_return=_one_hot(2, int(retrn)),
    )
    enc.validate()
    return enc


# ---------------------------------------------------------------------------
# feature assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    """Which context columns a model variant sees beyond the 4 lags."""

    variant: str
    weather_terms: tuple[tuple[str, int], ...] = ()
    flow_terms: tuple[int, ...] = ()
    embedding: bool = False

    @property
    def l_dim(self) -> int:
        return len(LAG_OFFSETS) + len(self.weather_terms) + len(self.flow_terms)

    def column_names(self) -> list[str]:
        def at(offset):
            return "t" if offset == 0 else f"t{offset:+d}"
        names = list(LAG_NAMES)
        names += [f"{sig}@{at(off)}" for sig, off in self.weather_terms]
        names += [f"flow@{at(off)}" for off in self.flow_terms]
        return names

    @classmethod
    def for_variant(cls, name: str) -> "FeatureSpec":
        try:
            return VARIANTS[name]
        except KeyError:
            raise DataError(
                f"unknown variant {name!r}; valid variants are "
                f"{', '.join(VARIANTS)}"
            )


VARIANTS: dict[str, FeatureSpec] = {
    "X": FeatureSpec("X"),
    "T": FeatureSpec("T", embedding=True),
    "W1": FeatureSpec("W1", (("hr", -1),)),
    "W2": FeatureSpec("W2", (("hr", -2), ("hr", -1))),
    "W3": FeatureSpec("W3", (("hr", -3), ("hr", -2), ("hr", -1))),
    "W4": FeatureSpec("W4", (("hr", 0),)),
    "W5": FeatureSpec("W5", (("hr", -1), ("hr", 0))),
    "W6": FeatureSpec("W6", (("hr", -1), ("hd", -1))),
    "W7": FeatureSpec("W7", (("hr", 0), ("hd", 0))),
    "I1": FeatureSpec("I1", flow_terms=(-1,)),
    "I2": FeatureSpec("I2", flow_terms=(-2, -1)),
    "I3": FeatureSpec("I3", flow_terms=(0,)),
    "I4": FeatureSpec("I4", flow_terms=(-1, 0)),
    "I5": FeatureSpec("I5", flow_terms=(-2, -1, 0)),
    "WIT": FeatureSpec("WIT", (("hr", -1), ("hr", 0), ("hr", 1)), (-1, 0), True),
}


@dataclass
class FeatureMatrix:
    t: int
    x: np.ndarray  # [N, L]
    columns: list[str]


def assemble_features(spec: FeatureSpec, panel: ODDemandPanel,
                      weather: WeatherSeries | None,
                      flows: ZoneFlowSeries | None, t: int) -> FeatureMatrix:
    """Per-OD rows of [4 lags | weather terms | origin-zone flow terms].

    Weather columns repeat the same scalar down the whole column (weather
    is city-wide); flow columns read the series of each OD's origin zone.
    """
    blocks = [build_lags(panel, t)]
    n = panel.n
    if spec.weather_terms:
        if weather is None:
            raise DataError(f"variant {spec.variant} needs a weather series")
        row = [weather.value(sig, t + off) for sig, off in spec.weather_terms]
        blocks.append(np.tile(np.array(row), (n, 1)))
    if spec.flow_terms:
        if flows is None:
            raise DataError(f"variant {spec.variant} needs zone flows")
        cols = np.empty((n, len(spec.flow_terms)))
        for col, off in enumerate(spec.flow_terms):
            for p in panel.od_pairs:
                cols[p.index, col] = flows.value(p.origin_zone, t + off)
        blocks.append(cols)
    x = np.concatenate(blocks, axis=1)
    if not np.all(np.isfinite(x)):
        raise DataError(f"features at t={t} contain non-finite values")
    return FeatureMatrix(t, x, spec.column_names())


class PanelScaler(BaseEstimator, TransformerMixin):
    """Column-wise z-scoring with train-window statistics.

    Constant columns keep scale 1 so transformed values are exactly 0
    rather than dividing by zero.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"scaler expects 2-D input, got shape {X.shape}")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std == 0.0, 1.0, std)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        return np.asarray(X, dtype=np.float64) * self.scale_ + self.mean_


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _open_csv(path: str, required: set[str]):
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        fh.close()
        raise DataError(
            f"{path}: expected columns {sorted(required)}, got "
            f"{reader.fieldnames}"
        )
    return fh, reader


def load_trips_csv(path: str) -> Iterable[Trip]:
    """Stream `departure_ts,origin_station,dest_station` rows."""
    fh, reader = _open_csv(path, {"departure_ts", "origin_station",
                                  "dest_station"})
    with fh:
        for row in reader:
            yield Trip(parse_ts(row["departure_ts"], "departure_ts"),
                       row["origin_station"], row["dest_station"])


def load_loop_csv(path: str) -> Iterable[LoopRecord]:
    """Stream `ts,loop_id,flow,occupancy` rows; empty flow means missing."""
    fh, reader = _open_csv(path, {"ts", "loop_id", "flow", "occupancy"})
    with fh:
        for row in reader:
            flow = None if row["flow"] == "" else float(row["flow"])
            yield LoopRecord(parse_ts(row["ts"], "ts"), row["loop_id"],
                             flow, float(row["occupancy"]))


def load_weather_csv(path: str, grid: HourGrid) -> WeatherSeries:
    """Read `ts,hr,hd`; absent grid hours are interpolated like flows."""
    hr = np.full(len(grid), np.nan)
    hd = np.full(len(grid), np.nan)
    fh, reader = _open_csv(path, {"ts", "hr", "hd"})
    with fh:
        for row in reader:
            idx = grid.index(parse_ts(row["ts"], "ts"))
            hr[idx] = float(row["hr"])
            hd[idx] = float(row["hd"])
    return WeatherSeries(grid, interpolate_gaps(hr, "hr"),
                         interpolate_gaps(hd, "hd"))


def load_calendar_csv(path: str) -> CalendarTable:
    cols = {"date", "business_day", "school_holiday", "holiday_departure",
            "holiday_return"}
    fh, reader = _open_csv(path, cols)
    flags = {}
    with fh:
        for row in reader:
            day = date.fromisoformat(row["date"])
            flags[day] = (row["business_day"] == "1",
                          row["school_holiday"] == "1",
                          row["holiday_departure"] == "1",
                          row["holiday_return"] == "1")
    if not flags:
        raise DataError(f"{path}: empty calendar table")
    return CalendarTable(flags)


def load_loop_zone_map_csv(path: str) -> dict[str, str]:
    fh, reader = _open_csv(path, {"loop_id", "zone_id"})
    mapping = {}
    with fh:
        for row in reader:
            mapping[row["loop_id"]] = row["zone_id"]
    if not mapping:
        raise DataError(f"{path}: empty loop-to-zone map")
    return mapping
