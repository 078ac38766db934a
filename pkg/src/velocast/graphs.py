"""Seven OD-pair similarity graphs and their row-normalized stack.

Nodes are origin-destination (OD) zone pairs, not zones. Two OD pairs are
related when their origin zones are close (spatially, functionally) or when
their demand histories co-move. The fixed matrix order is:

    [neighborhood_origin, neighborhood_dest,
     distance_origin, distance_dest,
     functionality_origin, functionality_dest,
     correlation]

All raw matrices are symmetric with unit diagonal and entries in [0, 1].
Normalization is Ã = D⁻¹(A + I) with D the row-sum diagonal of A + I, so
each normalized matrix is row-stochastic and the multi-graph convolution
averages rather than amplifies.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import GeoError, GraphError
from .geo import ZonePartition

__all__ = [
    "ODPair", "AdjacencyStack", "MATRIX_NAMES", "all_od_pairs",
    "build_neighborhood", "build_centroid_distance", "build_functionality",
    "build_correlation", "build_stack", "normalize_stack", "row_normalize",
    "save_stack", "load_stack",
]

MATRIX_NAMES = (
    "neighborhood_origin", "neighborhood_dest",
    "distance_origin", "distance_dest",
    "functionality_origin", "functionality_dest",
    "correlation",
)


@dataclass(frozen=True)
class ODPair:
    index: int
    origin_zone: str
    dest_zone: str

    def __post_init__(self):
        if self.origin_zone == self.dest_zone:
            raise GraphError(
                f"OD pair {self.index}: origin and destination are both "
                f"{self.origin_zone!r}"
            )


@dataclass
class AdjacencyStack:
    """The seven raw matrices, their normalized forms, and the OD roster."""

    od_pairs: list[ODPair]
    matrices: list[np.ndarray]
    normalized: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.od_pairs)
        if len(self.matrices) != len(MATRIX_NAMES):
            raise GraphError(
                f"stack needs {len(MATRIX_NAMES)} matrices, got "
                f"{len(self.matrices)}"
            )
        for name, m in zip(MATRIX_NAMES, self.matrices):
            if m.shape != (n, n):
                raise GraphError(f"{name}: expected shape {(n, n)}, got {m.shape}")

    @property
    def n(self) -> int:
        return len(self.od_pairs)


def all_od_pairs(partition: ZonePartition) -> list[ODPair]:
    """Every ordered zone pair with origin != destination, sorted by
    (origin, destination); indices are dense positions in that order."""
    pairs = []
    for origin in partition.ids:
        for dest in partition.ids:
            if origin != dest:
                pairs.append((origin, dest))
    return [ODPair(i, o, d) for i, (o, d) in enumerate(pairs)]


def _side_zones(od_pairs: list[ODPair], partition: ZonePartition,
                side: str) -> list[str]:
    if side not in ("origin", "destination"):
        raise GraphError(f"side must be 'origin' or 'destination', got {side!r}")
    zones = []
    for p in od_pairs:
        zid = p.origin_zone if side == "origin" else p.dest_zone
        if zid not in partition.zones:
            raise GraphError(f"OD pair {p.index}: unknown zone id {zid!r}")
        zones.append(zid)
    return zones


def _zone_index(od_pairs, partition, side):
    """Side-zone of each OD pair as an index into partition.ids."""
    order = {zid: k for k, zid in enumerate(partition.ids)}
    return np.array([order[z] for z in _side_zones(od_pairs, partition, side)])


def build_neighborhood(od_pairs: list[ODPair], partition: ZonePartition,
                       side: str) -> np.ndarray:
    """1 where the side-zones are identical or share a border, else 0."""
    ids = partition.ids
    nz = len(ids)
    zone_adj = np.eye(nz)
    pos = {zid: k for k, zid in enumerate(ids)}
    for i, j in partition.adjacent_pairs():
        zone_adj[pos[i], pos[j]] = 1.0
        zone_adj[pos[j], pos[i]] = 1.0
    idx = _zone_index(od_pairs, partition, side)
    out = zone_adj[np.ix_(idx, idx)]
    np.fill_diagonal(out, 1.0)
    return out


def build_centroid_distance(od_pairs: list[ODPair], partition: ZonePartition,
                            side: str) -> np.ndarray:
    """Gaussian kernel exp(-d²/σ²) on side-zone centroid distances, where σ
    is the standard deviation of centroid distances over all distinct zone
    pairs of the partition."""
    centroids = partition.centroids()
    diffs = centroids[:, None, :] - centroids[None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=2))
    iu = np.triu_indices(len(centroids), k=1)
    if iu[0].size == 0:
        raise GraphError("need at least two zones for a distance kernel")
    sigma = float(np.std(dist[iu]))
    if sigma == 0.0:
        raise GraphError("all zone centroids coincide; distance kernel is degenerate")
    idx = _zone_index(od_pairs, partition, side)
    d = dist[np.ix_(idx, idx)]
    out = np.exp(-(d ** 2) / sigma ** 2)
    np.fill_diagonal(out, 1.0)
    return out


def build_functionality(od_pairs: list[ODPair], partition: ZonePartition,
                        side: str) -> np.ndarray:
    """Cosine similarity of side-zone functionality vectors, clipped to
    [0, 1]; zero vectors give 0 off-diagonal."""
    try:
        fmat = partition.functionality_matrix()
    except GeoError as exc:
        raise GraphError(str(exc)) from None
    except ValueError as exc:
        raise GraphError(f"functionality vectors have mismatched lengths: {exc}")
    norms = np.linalg.norm(fmat, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = fmat / safe[:, None]
    cos = unit @ unit.T
    cos[norms == 0.0, :] = 0.0
    cos[:, norms == 0.0] = 0.0
    cos = np.clip(cos, 0.0, 1.0)
    idx = _zone_index(od_pairs, partition, side)
    out = cos[np.ix_(idx, idx)]
    np.fill_diagonal(out, 1.0)
    return out


def build_correlation(od_pairs: list[ODPair], demand: np.ndarray) -> np.ndarray:
    """Pearson correlation of hourly demand columns, clipped below at 0.

    `demand` has one row per training-window hour and one column per OD
    pair; pass training rows only so the graph never sees test data.
    Zero-variance columns correlate with nothing (0 off-diagonal).
    """
    demand = np.asarray(demand, dtype=np.float64)
    if demand.ndim != 2 or demand.shape[1] != len(od_pairs):
        raise GraphError(
            f"demand must be [hours x {len(od_pairs)} pairs], got "
            f"{demand.shape}"
        )
    if demand.shape[0] < 2:
        raise GraphError("need at least 2 timestamps to correlate demand")
    centered = demand - demand.mean(axis=0)
    std = centered.std(axis=0)
    safe = np.where(std == 0.0, 1.0, std)
    unit = centered / (safe * np.sqrt(demand.shape[0]))
    corr = unit.T @ unit
    corr[std == 0.0, :] = 0.0
    corr[:, std == 0.0] = 0.0
    out = np.clip(corr, 0.0, 1.0)
    np.fill_diagonal(out, 1.0)
    return out


def row_normalize(a: np.ndarray) -> np.ndarray:
    """Ã = D⁻¹(A + I): add self-loops, then scale every row to sum 1."""
    a_hat = a + np.eye(a.shape[0])
    return a_hat / a_hat.sum(axis=1, keepdims=True)


def normalize_stack(stack: AdjacencyStack) -> AdjacencyStack:
    stack.normalized = [row_normalize(m) for m in stack.matrices]
    return stack


def build_stack(od_pairs: list[ODPair], partition: ZonePartition,
                demand: np.ndarray) -> AdjacencyStack:
    """All seven matrices in canonical order, plus normalized forms."""
    matrices = [
        build_neighborhood(od_pairs, partition, "origin"),
        build_neighborhood(od_pairs, partition, "destination"),
        build_centroid_distance(od_pairs, partition, "origin"),
        build_centroid_distance(od_pairs, partition, "destination"),
        build_functionality(od_pairs, partition, "origin"),
        build_functionality(od_pairs, partition, "destination"),
        build_correlation(od_pairs, demand),
    ]
    return normalize_stack(AdjacencyStack(list(od_pairs), matrices))


def save_stack(stack: AdjacencyStack, directory: str) -> None:
    """One .npy per raw matrix plus a manifest with order and OD roster."""
    os.makedirs(directory, exist_ok=True)
    for name, m in zip(MATRIX_NAMES, stack.matrices):
        np.save(os.path.join(directory, f"{name}.npy"), m)
    manifest = {
        "order": list(MATRIX_NAMES),
        "n": stack.n,
        "od_pairs": [[p.origin_zone, p.dest_zone] for p in stack.od_pairs],
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)


def load_stack(directory: str) -> AdjacencyStack:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise GraphError(f"{directory}: no manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("order") != list(MATRIX_NAMES):
        raise GraphError(
            f"{directory}: matrix order {manifest.get('order')} does not "
            f"match {list(MATRIX_NAMES)}"
        )
    od_pairs = [ODPair(i, o, d) for i, (o, d) in enumerate(manifest["od_pairs"])]
    matrices = []
    for name in MATRIX_NAMES:
        path = os.path.join(directory, f"{name}.npy")
        if not os.path.exists(path):
            raise GraphError(f"{directory}: missing matrix file {name}.npy")
        matrices.append(np.load(path))
    return normalize_stack(AdjacencyStack(od_pairs, matrices))
