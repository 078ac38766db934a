"""Synthetic city generator with known ground-truth dependencies.

Builds a square grid of zones (residential / business / campus
archetypes), stations, a calendar with a mid-horizon school-holiday
block (optionally repeating at a fixed spacing, like a school-year
vacation rhythm), a renewal-process rain series, gravity-model Poisson
trip demand that rain suppresses and post-rain hours partially recover,
and loop-detector car flow that gains a share of the suppressed bike
trips.

Every random draw comes from substreams of one seed, so a config fixes
the entire dataset bit for bit. A truth sidecar records the per-hour
demand multipliers, the gravity vector, and the rain episodes, which
lets tests verify pipeline output against the generating process.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Iterator

import numpy as np
from shapely.geometry import box

from .errors import DataError
from .features import (
    CalendarTable, HourGrid, LoopRecord, ODDemandPanel, PERIODS_PER_HOUR,
    Trip, WeatherSeries,
)
from .geo import Station, Zone, ZonePartition, partition_from_zones, save_partition
from .graphs import ODPair, all_od_pairs

__all__ = [
    "SynthConfig", "SyntheticCity", "DemandBundle", "FlowBundle",
    "ARCHETYPES", "generate_city", "generate_weather", "generate_demand",
    "generate_flow", "write_dataset", "WEEKDAY_PROFILE", "WEEKEND_PROFILE",
]

# hour-of-day demand shape: commute peaks on weekdays, midday on weekends
WEEKDAY_PROFILE = (
    0.15, 0.10, 0.08, 0.08, 0.10, 0.25, 0.55, 1.05, 1.60, 1.10, 0.85, 0.90,
    1.10, 1.00, 0.90, 0.95, 1.15, 1.60, 1.45, 1.00, 0.70, 0.50, 0.35, 0.25,
)
WEEKEND_PROFILE = (
    0.20, 0.15, 0.12, 0.10, 0.08, 0.10, 0.15, 0.25, 0.45, 0.70, 0.95, 1.15,
    1.25, 1.25, 1.20, 1.15, 1.05, 0.95, 0.85, 0.70, 0.55, 0.45, 0.35, 0.28,
)

# archetypes: functionality fingerprint plus gravity production/attraction
ARCHETYPES = {
    "residential": {
        "functionality": (0.9, 0.1, 0.1, 0.6, 0.2, 0.3),
        "produce": 1.5, "attract": 0.7,
    },
    "business": {
        "functionality": (0.1, 0.9, 0.2, 0.3, 0.7, 0.2),
        "produce": 0.7, "attract": 1.5,
    },
    "campus": {
        "functionality": (0.2, 0.2, 0.9, 0.4, 0.3, 0.8),
        "produce": 1.1, "attract": 1.2,
    },
}


@dataclass(frozen=True)
class SynthConfig:
    grid_size: int = 5
    stations_per_zone: int = 2
    horizon_days: int = 30
    start: datetime = datetime(2014, 1, 6)  # a Monday, midnight
    cell_size: float = 500.0  # meters per grid cell
    gravity_exponent: float = 1.0
    demand_scale: float = 3.0  # trips per OD-hour at unit masses and distance
    weekday_profile: tuple = WEEKDAY_PROFILE
    weekend_profile: tuple = WEEKEND_PROFILE
    holiday_damping: float = 0.7  # demand multiplier during school holidays
    vacation_spacing_days: int | None = None  # repeat the block at this cadence
    rain_episode_rate: float = 0.4  # episodes per day
    rain_max_hours: int = 3  # longest episode
    rain_intensity_mean: float = 1.2  # mm/h
    beta: float = 0.7  # demand multiplier e^(-beta * hr)
    recovery_share: float = 0.5  # suppressed volume regained when rain stops
    substitution: float = 0.3  # car-flow gain per suppressed bike trip
    flow_base: float = 120.0  # vehicles/h per zone at profile 1.0
    flow_noise: float = 2.0  # stddev of hourly zone-flow noise
    corrupt_fraction: float = 0.05  # loop periods made invalid
    loops_per_zone: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.grid_size < 2:
            raise DataError("grid_size must be >= 2 (need at least 2 zones)")
        if self.stations_per_zone < 1 or self.loops_per_zone < 1:
            raise DataError("stations_per_zone and loops_per_zone must be >= 1")
        if self.horizon_days < 1:
            raise DataError("horizon_days must be >= 1")
        if self.start.hour or self.start.minute or self.start.second:
            raise DataError("start must be a midnight timestamp")
        for name in ("weekday_profile", "weekend_profile"):
            prof = getattr(self, name)
            if len(prof) != 24 or any(v < 0 for v in prof):
                raise DataError(f"{name} needs 24 non-negative entries")
        rates = ("cell_size", "gravity_exponent", "demand_scale",
                 "rain_episode_rate", "rain_intensity_mean", "beta",
                 "recovery_share", "substitution", "flow_base", "flow_noise")
        for name in rates:
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0")
        if self.rain_max_hours < 1:
            raise DataError("rain_max_hours must be >= 1")
        if not 0.0 < self.holiday_damping <= 1.0:
            raise DataError("holiday_damping must be in (0, 1]")
        if self.vacation_spacing_days is not None \
                and self.vacation_spacing_days < 21:
            raise DataError("vacation_spacing_days must be >= 21 (blocks "
                            "span 14 days)")
        if not 0.0 <= self.corrupt_fraction <= 0.5:
            raise DataError("corrupt_fraction must be in [0, 0.5]")

    @property
    def n_hours(self) -> int:
        return self.horizon_days * 24

    def grid(self) -> HourGrid:
        return HourGrid(self.start, self.n_hours)


@dataclass
class SyntheticCity:
    partition: ZonePartition
    stations: list[Station]
    calendar: CalendarTable
    archetypes: dict[str, str]  # zone id -> archetype name

    def stations_in(self, zone_id: str) -> list[Station]:
        return [s for s in self.stations if s.zone_id == zone_id]


def _archetype_for(row: int, col: int, grid_size: int) -> str:
    """Deterministic spatial layout: business core, campus corner block,
    residential ring."""
    center = (grid_size - 1) / 2.0
    if max(abs(row - center), abs(col - center)) <= grid_size / 4.0:
        return "business"
    if min(row, col) >= (3 * grid_size) // 4:
        return "campus"
    return "residential"


def generate_city(config: SynthConfig) -> SyntheticCity:
    """Grid zones with archetype functionality, stations, and a calendar."""
    rng = np.random.default_rng([config.seed, 0])
    width = len(str(config.grid_size - 1))
    s = config.cell_size
    zones = []
    archetypes = {}
    for row in range(config.grid_size):
        for col in range(config.grid_size):
            zid = f"z{row:0{width}d}{col:0{width}d}"
            arch = _archetype_for(row, col, config.grid_size)
            base = np.array(ARCHETYPES[arch]["functionality"])
            fn = np.clip(base + rng.normal(0.0, 0.03, base.size), 0.0, None)
            poly = box(col * s, row * s, (col + 1) * s, (row + 1) * s)
            zones.append(Zone.from_polygon(zid, poly, fn))
            archetypes[zid] = arch
    partition = partition_from_zones(zones)

    stations = []
    for row in range(config.grid_size):
        for col in range(config.grid_size):
            zid = f"z{row:0{width}d}{col:0{width}d}"
            for k in range(config.stations_per_zone):
                u, v = rng.uniform(0.08, 0.92, 2)
                stations.append(Station(
                    f"st_{zid}_{k}", float((col + u) * s),
                    float((row + v) * s), zone_id=zid
                ))

    calendar = _build_calendar(config)
    return SyntheticCity(partition, stations, calendar, archetypes)


def _build_calendar(config: SynthConfig) -> CalendarTable:
    """Weekends off, a 14-day school-holiday block mid-horizon (when the
    horizon is at least 4 weeks) with departure/return flags on its first
    and last day. With vacation_spacing_days set, the block repeats at
    that cadence in both directions, school-calendar style, as far as
    whole blocks fit the horizon."""
    days = [config.start.date() + timedelta(days=i)
            for i in range(config.horizon_days)]
    block: set[date] = set()
    firsts: set[date] = set()
    lasts: set[date] = set()
    if config.horizon_days >= 28:
        anchor = config.horizon_days // 2 - 7
        starts = [anchor]
        if config.vacation_spacing_days:
            step = config.vacation_spacing_days
            s = anchor - step
            while s >= 0:
                starts.append(s)
                s -= step
            s = anchor + step
            while s + 14 <= config.horizon_days:
                starts.append(s)
                s += step
        for start_idx in starts:
            block_days = days[start_idx:start_idx + 14]
            block.update(block_days)
            firsts.add(block_days[0])
            lasts.add(block_days[-1])
    flags = {}
    for d in days:
        flags[d] = (d.weekday() < 5, d in block, d in firsts, d in lasts)
    return CalendarTable(flags)


# ---------------------------------------------------------------------------
# weather
# ---------------------------------------------------------------------------

def generate_weather(config: SynthConfig) -> tuple[WeatherSeries, dict]:
    """Rain as a renewal process: exponential gaps between episodes, 1 to
    rain_max_hours of positive intensity each. Returns the series and the
    episode bookkeeping for the truth sidecar."""
    rng = np.random.default_rng([config.seed, 1])
    n = config.n_hours
    hr = np.zeros(n)
    hd = np.zeros(n)
    episodes = []
    if config.rain_episode_rate > 0:
        mean_gap = 24.0 / config.rain_episode_rate
        t = rng.exponential(mean_gap)
        while t < n:
            start = int(t)
            length = int(rng.integers(1, config.rain_max_hours + 1))
            end = min(start + length, n)
            for h in range(start, end):
                hr[h] = rng.exponential(config.rain_intensity_mean) + 0.05
                hd[h] = rng.uniform(10.0, 60.0)
            episodes.append({"start": start, "length": end - start})
            t = t + length + rng.exponential(mean_gap)
    weather = WeatherSeries(config.grid(), hr, hd)
    return weather, {"episodes": episodes, "n_episodes": len(episodes)}


# ---------------------------------------------------------------------------
# demand
# ---------------------------------------------------------------------------

def _gravity_vector(config: SynthConfig, city: SyntheticCity,
                    od_pairs: list[ODPair]) -> np.ndarray:
    """Base trips/hour per OD pair: produce(o) * attract(d) / distance^gamma
    with distance in cell units."""
    zones = city.partition.zones
    out = np.zeros(len(od_pairs))
    for k, pair in enumerate(od_pairs):
        o, d = zones[pair.origin_zone], zones[pair.dest_zone]
        dist = np.hypot(o.centroid[0] - d.centroid[0],
                        o.centroid[1] - d.centroid[1]) / config.cell_size
        produce = ARCHETYPES[city.archetypes[pair.origin_zone]]["produce"]
        attract = ARCHETYPES[city.archetypes[pair.dest_zone]]["attract"]
        out[k] = config.demand_scale * produce * attract \
            / dist ** config.gravity_exponent
    return out


def _hour_factors(config: SynthConfig, weather: WeatherSeries,
                  calendar: CalendarTable) -> dict[str, np.ndarray]:
    """The three per-hour multipliers behind every demand rate."""
    grid = weather.grid
    n = len(grid)
    cal = np.zeros(n)
    for t in range(n):
        ts = grid.timestamp(t)
        profile = (config.weekday_profile if ts.weekday() < 5
                   else config.weekend_profile)
        factor = profile[ts.hour]
        if calendar.get(ts.date())[1]:
            factor *= config.holiday_damping
        cal[t] = factor
    wet = np.exp(-config.beta * weather.hr)
    recovery = np.ones(n)
    for t in range(1, n):
        if weather.hr[t] == 0.0 and weather.hr[t - 1] > 0.0:
            suppressed = 1.0 - np.exp(-config.beta * weather.hr[t - 1])
            recovery[t] = 1.0 + config.recovery_share \
                * (weather.hd[t - 1] / 60.0) * suppressed
    return {"calendar": cal, "weather": wet, "recovery": recovery}


@dataclass
class DemandBundle:
    """Counts panel plus the exact generating process, with trips expanded
    on demand (they can be millions of records at benchmark scale)."""

    panel: ODDemandPanel
    truth: dict
    config: SynthConfig
    city: SyntheticCity

    def trips(self) -> Iterator[Trip]:
        """Expand counts to station-level records; a fresh substream makes
        repeated iteration yield identical trips."""
        rng = np.random.default_rng([self.config.seed, 3])
        grid = self.panel.grid
        by_zone = {zid: sorted(self.city.stations_in(zid), key=lambda s: s.id)
                   for zid in self.city.partition.ids}
        counts = self.panel.counts
        for t in range(len(grid)):
            base_ts = grid.timestamp(t)
            for k, pair in enumerate(self.panel.od_pairs):
                c = int(counts[t, k])
                if c == 0:
                    continue
                origins = by_zone[pair.origin_zone]
                dests = by_zone[pair.dest_zone]
                for _ in range(c):
                    o = origins[int(rng.integers(len(origins)))]
                    d = dests[int(rng.integers(len(dests)))]
                    minute = int(rng.integers(60))
                    yield Trip(base_ts + timedelta(minutes=minute), o.id, d.id)


def generate_demand(config: SynthConfig, city: SyntheticCity,
                    weather: WeatherSeries,
                    calendar: CalendarTable) -> DemandBundle:
    """Poisson OD counts with rate gravity[k] * calendar * e^(-beta*hr) *
    post-rain recovery."""
    rng = np.random.default_rng([config.seed, 2])
    od_pairs = all_od_pairs(city.partition)
    gravity = _gravity_vector(config, city, od_pairs)
    factors = _hour_factors(config, weather, calendar)
    multiplier = (factors["calendar"] * factors["weather"]
                  * factors["recovery"])
    lam = np.outer(multiplier, gravity)
    counts = rng.poisson(lam).astype(np.float64)
    panel = ODDemandPanel(config.grid(), od_pairs, counts)
    truth = {
        "gravity": gravity,
        "calendar_factor": factors["calendar"],
        "weather_factor": factors["weather"],
        "recovery_factor": factors["recovery"],
        "hour_multiplier": multiplier,
    }
    return DemandBundle(panel, truth, config, city)


# ---------------------------------------------------------------------------
# car flow
# ---------------------------------------------------------------------------

@dataclass
class FlowBundle:
    """True hourly zone flows plus lazy 6-minute loop records."""

    zone_ids: list[str]
    zone_flow: np.ndarray  # [hours, zones], the signal cleaning should recover
    loop_to_zone: dict[str, str]
    config: SynthConfig

    def records(self) -> Iterator[LoopRecord]:
        """Disaggregate each zone-hour evenly over loops and periods, then
        corrupt a seeded fraction (missing flow or occupancy > 0.5)."""
        rng = np.random.default_rng([self.config.seed, 5])
        grid = self.config.grid()
        loops_of = {z: sorted(l for l, zz in self.loop_to_zone.items()
                              if zz == z) for z in self.zone_ids}
        n_loops = self.config.loops_per_zone
        frac = self.config.corrupt_fraction
        for t in range(len(grid)):
            hour_ts = grid.timestamp(t)
            for col, zone in enumerate(self.zone_ids):
                per_period = self.zone_flow[t, col] / (n_loops
                                                      * PERIODS_PER_HOUR)
                for loop_id in loops_of[zone]:
                    for p in range(PERIODS_PER_HOUR):
                        ts = hour_ts + timedelta(minutes=6 * p)
                        u = rng.random()
                        occ_u = rng.random()
                        if u < frac / 2.0:
                            # sensor dropout
                            yield LoopRecord(ts, loop_id, None,
                                             0.05 + 0.3 * occ_u)
                        elif u < frac:
                            # congested period: high occupancy, choked flow
                            yield LoopRecord(ts, loop_id, 0.2 * per_period,
                                             0.55 + 0.4 * occ_u)
                        else:
                            yield LoopRecord(ts, loop_id, per_period,
                                             0.05 + 0.3 * occ_u)


def generate_flow(config: SynthConfig, city: SyntheticCity,
                  weather: WeatherSeries, demand: DemandBundle) -> FlowBundle:
    """Zone flow = base profile + substitution * suppressed bike demand +
    noise. Suppressed demand is the expected dry-weather origin volume
    minus the rain-reduced one, so car flow rises exactly when and where
    rain cuts bike trips."""
    rng = np.random.default_rng([config.seed, 4])
    zone_ids = city.partition.ids
    truth = demand.truth
    n = config.n_hours
    origin_gravity = np.zeros(len(zone_ids))
    for k, pair in enumerate(demand.panel.od_pairs):
        origin_gravity[zone_ids.index(pair.origin_zone)] += \
            truth["gravity"][k]
    suppressed = np.outer(
        truth["calendar_factor"] * (1.0 - truth["weather_factor"]),
        origin_gravity,
    )
    base = np.outer(config.flow_base * truth["calendar_factor"],
                    np.ones(len(zone_ids)))
    noise = rng.normal(0.0, config.flow_noise, (n, len(zone_ids))) \
        if config.flow_noise > 0 else np.zeros((n, len(zone_ids)))
    zone_flow = np.clip(base + config.substitution * suppressed + noise,
                        0.0, None)
    loop_to_zone = {f"loop_{z}_{i}": z for z in zone_ids
                    for i in range(config.loops_per_zone)}
    return FlowBundle(list(zone_ids), zone_flow, loop_to_zone, config)


# ---------------------------------------------------------------------------
# file emission
# ---------------------------------------------------------------------------

def write_dataset(config: SynthConfig, out_dir: str) -> dict[str, str]:
    """Generate everything and write the ingestion files plus the truth
    sidecar. Returns the path of every artifact."""
    os.makedirs(out_dir, exist_ok=True)
    city = generate_city(config)
    weather, weather_truth = generate_weather(config)
    demand = generate_demand(config, city, weather, city.calendar)
    flow = generate_flow(config, city, weather, demand)
    grid = config.grid()

    paths = {name: os.path.join(out_dir, fname) for name, fname in (
        ("zones", "zones.geojson"), ("stations", "stations.csv"),
        ("calendar", "calendar.csv"), ("weather", "weather.csv"),
        ("trips", "trips.csv"), ("loops", "loops.csv"),
        ("loop_zones", "loop_zones.csv"), ("truth", "truth.json"),
    )}

    save_partition(city.partition, paths["zones"])

    with open(paths["stations"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "x", "y"])
        for st in city.stations:
            writer.writerow([st.id, repr(st.x), repr(st.y)])

    with open(paths["calendar"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "business_day", "school_holiday",
                         "holiday_departure", "holiday_return"])
        for day in sorted(city.calendar.flags):
            row = city.calendar.flags[day]
            writer.writerow([day.isoformat()] + ["1" if v else "0"
                                                 for v in row])

    with open(paths["weather"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts", "hr", "hd"])
        for t in range(len(grid)):
            writer.writerow([grid.timestamp(t).isoformat(),
                             repr(float(weather.hr[t])),
                             repr(float(weather.hd[t]))])

    with open(paths["trips"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["departure_ts", "origin_station", "dest_station"])
        for trip in demand.trips():
            writer.writerow([trip.departure.isoformat(),
                             trip.origin_station, trip.dest_station])

    with open(paths["loops"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts", "loop_id", "flow", "occupancy"])
        for rec in flow.records():
            writer.writerow([
                rec.ts.isoformat(), rec.loop_id,
                "" if rec.flow is None else repr(float(rec.flow)),
                repr(float(rec.occupancy)),
            ])

    with open(paths["loop_zones"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loop_id", "zone_id"])
        for loop_id in sorted(flow.loop_to_zone):
            writer.writerow([loop_id, flow.loop_to_zone[loop_id]])

    truth = {
        "seed": config.seed,
        "beta": config.beta,
        "archetypes": city.archetypes,
        "episodes": weather_truth["episodes"],
        "n_episodes": weather_truth["n_episodes"],
        "od_pairs": [[p.origin_zone, p.dest_zone]
                     for p in demand.panel.od_pairs],
        "gravity": [float(v) for v in demand.truth["gravity"]],
        "calendar_factor": [float(v)
                            for v in demand.truth["calendar_factor"]],
        "weather_factor": [float(v) for v in demand.truth["weather_factor"]],
        "recovery_factor": [float(v)
                            for v in demand.truth["recovery_factor"]],
        "hour_multiplier": [float(v)
                            for v in demand.truth["hour_multiplier"]],
        "zone_ids": flow.zone_ids,
        "zone_flow": [[float(v) for v in row] for row in flow.zone_flow],
    }
    with open(paths["truth"], "w") as fh:
        json.dump(truth, fh, sort_keys=True)
    return paths
