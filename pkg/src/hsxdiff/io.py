"""CSV output at round-trip precision, atomic writes and run manifests."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import SystemState
from .model import ModelParams

FLOAT_FMT = "%.17g"


def atomic_write_text(path, text: str) -> Path:
    """Write through a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    text = str(v)
    if any(ch in text for ch in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def write_columns(path, columns: dict) -> Path:
    """Equal-length numeric columns, one per key, in insertion order."""
    names = list(columns)
    arrays = [np.asarray(columns[k], dtype=float) for k in names]
    return write_csv(path, names, zip(*arrays))


def write_state_csv(path, state: SystemState, params: ModelParams) -> Path:
    """Profile columns ``x, r, b, rho, phi``."""
    return write_columns(
        path,
        {"x": state.grid.x, "r": state.r, "b": state.b, "rho": state.rho, "phi": state.phi(params)},
    )


def read_csv_columns(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_manifest(out_dir, manifest: dict, outputs) -> Path:
    """Record every output with its hash and write ``manifest.json`` last, atomically."""
    out_dir = Path(out_dir)
    listing = []
    for p in outputs:
        p = Path(p)
        listing.append({"path": str(p.relative_to(out_dir)), "sha256": file_sha256(p), "bytes": p.stat().st_size})
    body = dict(manifest)
    body["outputs"] = sorted(listing, key=lambda item: item["path"])
    text = json.dumps(body, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    return atomic_write_text(out_dir / "manifest.json", text + "\n")
