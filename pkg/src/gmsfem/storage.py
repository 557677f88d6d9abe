"""Binary storage of offline spaces and basis dumps.

Layout: 8-byte magic, little-endian ``uint64`` header length, a UTF-8
JSON header, then every array listed in ``header["arrays"]`` as raw
little-endian data in column-major order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .gmsfem import Fragment, OfflineSpace, assemble_offline
from .grid import GridHierarchy, build_grid

__all__ = ["MAGIC", "write_arrays", "read_arrays", "save_offline", "load_offline", "dump_basis"]

MAGIC = b"GMSFEM\x00\x01"
_DTYPES = {"float64": "<f8", "int64": "<i8"}


def write_arrays(path: str | Path, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    entries, blobs = [], []
    for name, arr in arrays:
        arr = np.asarray(arr)
        kind = "int64" if np.issubdtype(arr.dtype, np.integer) else "float64"
        entries.append({"name": name, "dtype": kind, "shape": list(arr.shape)})
        blobs.append(np.asarray(arr, dtype=_DTYPES[kind]).tobytes(order="F"))
    header = json.dumps({**meta, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_arrays(path: str | Path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ConfigError(f"{path}: not a gmsfem binary file")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        meta = json.loads(data[16 : 16 + n])
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: corrupt header") from exc
    pos = 16 + n
    out = {}
    for e in meta["arrays"]:
        dt = np.dtype(_DTYPES[e["dtype"]])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        size = count * dt.itemsize
        if pos + size > len(data):
            raise ConfigError(f"{path}: truncated array {e['name']}")
        out[e["name"]] = np.frombuffer(data[pos : pos + size], dtype=dt).reshape(e["shape"], order="F").copy()
        pos += size
    return meta, out


def save_offline(path: str | Path, off: OfflineSpace) -> None:
    """Fragments, partition of unity and counts; enough to re-solve with any counts."""
    if off.fragments is None:
        raise ValueError("offline space has no fragments to save")
    g = off.grid
    meta = {
        "format": "offline-space",
        "grid": [g.nx, g.ny, g.refine],
        "kind": off.kind,
        "seed": off.seed,
        "pou": off.pou,
        "fragments": [
            {"index": fr.index, "snapshot_count": fr.snapshot_count, "truncated": fr.truncated}
            for fr in off.fragments
        ],
    }
    arrays = [("counts", off.counts)]
    for fr, chi in zip(off.fragments, off.pou_values):
        i = fr.index
        arrays += [(f"nodes_{i}", fr.nodes), (f"eig_{i}", fr.eigenvalues), (f"modes_{i}", fr.modes), (f"pou_{i}", chi)]
    write_arrays(path, meta, arrays)


def load_offline(path: str | Path, grid: GridHierarchy | None = None) -> OfflineSpace:
    meta, arr = read_arrays(path)
    if meta.get("format") != "offline-space":
        raise ConfigError(f"{path}: not an offline space")
    nx, ny, r = meta["grid"]
    stored = build_grid(nx, ny, r)
    if grid is not None and (grid.nx, grid.ny, grid.refine) != (nx, ny, r):
        raise ConfigError(f"{path}: stored grid {nx}x{ny}/{r} does not match the configured grid")
    grid = grid or stored
    frags, chi = [], []
    for fm in meta["fragments"]:
        i = fm["index"]
        frags.append(
            Fragment(i, arr[f"nodes_{i}"], arr[f"eig_{i}"], arr[f"modes_{i}"], meta["kind"], meta["seed"],
                     fm["snapshot_count"], fm["truncated"])
        )
        chi.append(arr[f"pou_{i}"])
    return assemble_offline(grid, frags, arr["counts"], chi, meta["pou"])


def dump_basis(directory: str | Path, off: OfflineSpace) -> list[Path]:
    """One file per neighborhood: its selected (χ-multiplied) columns over its fine nodes."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (nodes, cols, eig) in enumerate(zip(off.nodes, off.columns, off.eigenvalues)):
        p = d / f"omega_{i:05d}.bin"
        meta = {"format": "basis", "neighborhood": i, "count": int(cols.shape[1])}
        write_arrays(p, meta, [("nodes", nodes), ("columns", cols), ("eigenvalues", eig[: cols.shape[1]])])
        paths.append(p)
    return paths
