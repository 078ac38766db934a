"""Zone polygons, adjacency, and greedy pairwise aggregation.

A partition is a set of non-overlapping polygonal zones in a projected
planar CRS (coordinates in meters). Aggregation repeatedly merges the
adjacent pair minimizing (s_i + s_j) / P_ij, i.e. it prefers small zones
with long common borders, which keeps aggregates compact. Only adjacent
pairs are candidates, so every aggregate stays contiguous by construction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import MultiPolygon, Point, Polygon, mapping, shape
from shapely.ops import unary_union
from shapely.strtree import STRtree

from .errors import GeoError

__all__ = [
    "Zone", "ZonePartition", "Station", "load_partition", "partition_from_zones",
    "merge_objective", "aggregate_to", "assign_stations", "load_stations",
    "save_partition", "save_merge_tree",
]

Pair = tuple[str, str]


def _pair(i: str, j: str) -> Pair:
    return (i, j) if i < j else (j, i)


@dataclass
class Zone:
    """One zone: polygon in meters, surface in m², optional functionality."""

    id: str
    polygon: Polygon | MultiPolygon
    surface: float
    centroid: tuple[float, float]
    functionality: np.ndarray | None = None

    @classmethod
    def from_polygon(cls, zone_id: str, polygon: Polygon | MultiPolygon,
                     functionality: np.ndarray | None = None) -> "Zone":
        if not polygon.is_valid:
            raise GeoError(f"zone {zone_id!r}: invalid polygon (self-intersection?)")
        if polygon.area <= 0.0:
            raise GeoError(f"zone {zone_id!r}: surface must be positive")
        c = polygon.centroid
        return cls(zone_id, polygon, float(polygon.area), (c.x, c.y), functionality)


@dataclass
class Station:
    id: str
    x: float
    y: float
    zone_id: str | None = None


@dataclass
class ZonePartition:
    """Zones plus adjacency with shared-perimeter lengths and merge history.

    `adjacency` maps sorted id pairs to the length of the common border in
    meters; only pairs with positive length appear. `members` maps each
    current zone to the original zone ids it aggregates; `merges` is the
    ordered merge log.
    """

    zones: dict[str, Zone]
    adjacency: dict[Pair, float]
    members: dict[str, list[str]] = field(default_factory=dict)
    merges: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            self.members = {zid: [zid] for zid in self.zones}

    @property
    def ids(self) -> list[str]:
        """Canonical zone order used by every matrix and panel: sorted id."""
        return sorted(self.zones)

    def __len__(self) -> int:
        return len(self.zones)

    def zone(self, zone_id: str) -> Zone:
        try:
            return self.zones[zone_id]
        except KeyError:
            raise GeoError(f"unknown zone id {zone_id!r}") from None

    def surfaces(self) -> np.ndarray:
        return np.array([self.zones[z].surface for z in self.ids])

    def centroids(self) -> np.ndarray:
        return np.array([self.zones[z].centroid for z in self.ids])

    def functionality_matrix(self) -> np.ndarray:
        rows = []
        for zid in self.ids:
            f = self.zones[zid].functionality
            if f is None:
                raise GeoError(f"zone {zid!r} has no functionality vector")
            rows.append(f)
        return np.array(rows, dtype=np.float64)

    def adjacent_pairs(self) -> list[Pair]:
        return sorted(self.adjacency)

    def shared_perimeter(self, i: str, j: str) -> float:
        return self.adjacency.get(_pair(i, j), 0.0)


def _compute_adjacency(zones: dict[str, Zone]) -> dict[Pair, float]:
    """Pairs sharing a border of positive length; corner touches excluded."""
    ids = sorted(zones)
    geoms = [zones[z].polygon for z in ids]
    tree = STRtree(geoms)
    adjacency: dict[Pair, float] = {}
    for a_idx, zid in enumerate(ids):
        for b_idx in tree.query(geoms[a_idx]):
            b_idx = int(b_idx)
            if b_idx <= a_idx:
                continue
            common = geoms[a_idx].boundary.intersection(geoms[b_idx].boundary)
            if common.length > 0.0:
                adjacency[_pair(zid, ids[b_idx])] = float(common.length)
    return adjacency


def partition_from_zones(zones: list[Zone]) -> ZonePartition:
    by_id: dict[str, Zone] = {}
    for z in zones:
        if z.id in by_id:
            raise GeoError(f"duplicate zone id {z.id!r}")
        by_id[z.id] = z
    if not by_id:
        raise GeoError("partition has no zones")
    has_fn = [z.functionality is not None for z in by_id.values()]
    if any(has_fn) and not all(has_fn):
        raise GeoError("functionality vectors must be present for all zones or none")
    return ZonePartition(by_id, _compute_adjacency(by_id))


def _check_rings_closed(zone_id: str, geometry: dict) -> None:
    coords = geometry["coordinates"]
    polys = coords if geometry["type"] == "MultiPolygon" else [coords]
    for rings in polys:
        for ring in rings:
            if len(ring) < 4 or list(ring[0]) != list(ring[-1]):
                raise GeoError(f"zone {zone_id!r}: ring is not closed")


def load_partition(zone_file: str) -> ZonePartition:
    """Read a FeatureCollection of Polygon/MultiPolygon zones.

    Each feature needs properties.id; properties.functionality (numeric
    array) is optional but must be all-or-none across features.
    Coordinates are planar meters; no reprojection happens here.
    """
    with open(zone_file) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise GeoError(f"{zone_file}: expected a FeatureCollection")
    features = doc.get("features", [])
    if not features:
        raise GeoError(f"{zone_file}: no features")
    zones: list[Zone] = []
    for feat in features:
        props = feat.get("properties") or {}
        zid = props.get("id")
        if zid is None:
            raise GeoError(f"{zone_file}: feature without properties.id")
        zid = str(zid)
        geometry = feat.get("geometry") or {}
        if geometry.get("type") not in ("Polygon", "MultiPolygon"):
            raise GeoError(
                f"zone {zid!r}: geometry must be Polygon or MultiPolygon"
            )
        _check_rings_closed(zid, geometry)
        fn = props.get("functionality")
        fn_arr = None if fn is None else np.asarray(fn, dtype=np.float64)
        zones.append(Zone.from_polygon(zid, shape(geometry), fn_arr))
    return partition_from_zones(zones)


def merge_objective(partition: ZonePartition, i: str, j: str) -> float:
    """(s_i + s_j) / P_ij for an adjacent pair: low means small zones with
    a long common border, the preferred merge."""
    p = partition.shared_perimeter(i, j)
    if p <= 0.0:
        raise GeoError(f"zones {i!r} and {j!r} are not adjacent")
    return (partition.zone(i).surface + partition.zone(j).surface) / p


def _merge_pair(partition: ZonePartition, i: str, j: str,
                objective: float) -> None:
    """Merge j into i in place (i < j). Surfaces add, the new border with
    each neighbor is the sum of the members' borders, and the centroid is
    the surface-weighted mean, which is exact for non-overlapping zones."""
    zi, zj = partition.zones[i], partition.zones[j]
    s = zi.surface + zj.surface
    cx = (zi.centroid[0] * zi.surface + zj.centroid[0] * zj.surface) / s
    cy = (zi.centroid[1] * zi.surface + zj.centroid[1] * zj.surface) / s
    fn = None
    if zi.functionality is not None:
        fn = (zi.functionality * zi.surface + zj.functionality * zj.surface) / s
    merged_poly = unary_union([zi.polygon, zj.polygon])
    partition.zones[i] = Zone(i, merged_poly, s, (cx, cy), fn)
    del partition.zones[j]

    adjacency = partition.adjacency
    del adjacency[_pair(i, j)]
    for pair in [p for p in adjacency if j in p]:
        k = pair[0] if pair[1] == j else pair[1]
        length = adjacency.pop(pair)
        target = _pair(i, k)
        adjacency[target] = adjacency.get(target, 0.0) + length

    partition.members[i] = sorted(partition.members[i] + partition.members[j])
    del partition.members[j]
    partition.merges.append({
        "step": len(partition.merges),
        "pair": [i, j],
        "into": i,
        "objective": objective,
    })


def aggregate_to(partition: ZonePartition, target_count: int) -> ZonePartition:
    """Greedily merge the argmin-objective adjacent pair until target_count
    zones remain. Ties break on the lexicographically smallest id pair; the
    merged zone takes the smaller id. The input partition is not modified.
    """
    if target_count < 1:
        raise GeoError(f"target_count must be >= 1, got {target_count}")
    if target_count > len(partition):
        raise GeoError(
            f"target_count {target_count} exceeds current zone count "
            f"{len(partition)}"
        )
    work = ZonePartition(
        dict(partition.zones), dict(partition.adjacency),
        {k: list(v) for k, v in partition.members.items()},
        [dict(m) for m in partition.merges],
    )
    while len(work) > target_count:
        if not work.adjacency:
            raise GeoError(
                f"no adjacent pair left at {len(work)} zones; the territory "
                f"is disconnected and the achievable minimum is {len(work)}"
            )
        best_pair, best_obj = None, float("inf")
        for pair in sorted(work.adjacency):
            obj = merge_objective(work, *pair)
            if obj < best_obj:
                best_pair, best_obj = pair, obj
        _merge_pair(work, best_pair[0], best_pair[1], best_obj)
    return work


def assign_stations(partition: ZonePartition,
                    stations: list[Station]) -> list[Station]:
    """Point-in-polygon assignment with two deterministic fallbacks: points
    on a shared border go to the smaller zone id, points outside every zone
    go to the zone with the nearest boundary."""
    ids = partition.ids
    assigned = []
    for st in stations:
        point = Point(st.x, st.y)
        hit = None
        for zid in ids:
            if partition.zones[zid].polygon.covers(point):
                hit = zid
                break
        if hit is None:
            hit = min(
                ids,
                key=lambda z: (partition.zones[z].polygon.boundary.distance(point), z),
            )
        assigned.append(Station(st.id, st.x, st.y, hit))
    return assigned


def load_stations(path: str) -> list[Station]:
    """CSV with header station_id,x,y."""
    stations = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"station_id", "x", "y"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise GeoError(f"{path}: expected columns station_id,x,y")
        for row in reader:
            stations.append(Station(row["station_id"], float(row["x"]),
                                    float(row["y"])))
    if not stations:
        raise GeoError(f"{path}: no stations")
    return stations


def save_partition(partition: ZonePartition, path: str) -> None:
    """Write zones back out as a FeatureCollection, sorted by id."""
    features = []
    for zid in partition.ids:
        z = partition.zones[zid]
        props: dict = {"id": zid, "surface": z.surface,
                       "members": partition.members[zid]}
        if z.functionality is not None:
            props["functionality"] = [float(v) for v in z.functionality]
        features.append({
            "type": "Feature",
            "properties": props,
            "geometry": mapping(z.polygon),
        })
    doc = {"type": "FeatureCollection", "features": features}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def save_merge_tree(partition: ZonePartition, path: str) -> None:
    doc = {
        "merges": partition.merges,
        "members": {z: partition.members[z] for z in partition.ids},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
