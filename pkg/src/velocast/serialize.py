"""Deterministic array archives.

A checkpoint written twice from the same state must be byte-identical, so
reports and manifests can rely on content digests. Stock zip writing embeds
the wall-clock mtime in every entry; here every entry gets a fixed epoch
timestamp, no compression (arrays are mostly incompressible float bytes),
and sorted entry order.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from .errors import ArtifactError

__all__ = ["save_arrays", "load_arrays"]

_EPOCH = (1980, 1, 1, 0, 0, 0)  # earliest timestamp zip can represent


def save_arrays(path: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus a JSON meta block to one reproducible file."""
    entries: list[tuple[str, bytes]] = [
        ("meta.json", json.dumps(meta, sort_keys=True).encode())
    ]
    for name in sorted(arrays):
        buf = io.BytesIO()
        np.save(buf, np.ascontiguousarray(arrays[name]))
        entries.append((f"arrays/{name}.npy", buf.getvalue()))
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, payload in entries:
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            zf.writestr(info, payload)


def load_arrays(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise ArtifactError(f"{path}: cannot read archive ({exc})")
    with zf:
        names = zf.namelist()
        if "meta.json" not in names:
            raise ArtifactError(f"{path}: archive has no meta.json")
        meta = json.loads(zf.read("meta.json"))
        arrays = {}
        for name in names:
            if name.startswith("arrays/") and name.endswith(".npy"):
                key = name[len("arrays/"):-len(".npy")]
                arrays[key] = np.load(io.BytesIO(zf.read(name)))
    return meta, arrays
