"""Model bundles: a JSON manifest plus one little-endian float64 blob.

Layout of a bundle directory::

    manifest.json   # free-form metadata + "arrays": [{"name", "shape"}, ...]
    params.bin      # arrays concatenated in manifest order, '<f8'
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
BLOB = "params.bin"


def save_bundle(directory, manifest: dict, arrays: dict[str, np.ndarray]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    with open(directory / BLOB, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            entries.append({"name": name, "shape": list(arr.shape)})
            fh.write(arr.tobytes())
    doc = dict(manifest)
    doc["arrays"] = entries
    (directory / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return directory


def load_bundle(directory) -> tuple[dict, dict[str, np.ndarray]]:
    directory = Path(directory)
    for name in (MANIFEST, BLOB):
        if not (directory / name).exists():
            raise FileNotFoundError(f"model bundle is missing {directory / name}")
    doc = json.loads((directory / MANIFEST).read_text())
    blob = np.frombuffer((directory / BLOB).read_bytes(), dtype="<f8")
    arrays, offset = {}, 0
    for entry in doc.pop("arrays"):
        size = int(np.prod(entry["shape"], dtype=int))
        if offset + size > blob.size:
            raise ValueError("params.bin is shorter than the manifest declares")
        arrays[entry["name"]] = blob[offset:offset + size].reshape(entry["shape"]).copy()
        offset += size
    if offset != blob.size:
        raise ValueError("params.bin has trailing data not listed in the manifest")
    return doc, arrays
