"""Model files, CSV tables and JSON sidecars.

Model file layout (all integers little-endian)::

    8 bytes   magic b"RBSPMDL\\0"
    4 bytes   schema version (uint32)
    8 bytes   header length in bytes (uint64)
    header    UTF-8 JSON: metadata plus an array directory
    padding   zero bytes up to a multiple of 8
    data      raw array blocks (<f8, <c16 or <i8), C order, at the directory offsets
"""
from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

from .basis import ReducedBasisModel
from .errors import ConfigError

__all__ = [
    "MAGIC",
    "SCHEMA_VERSION",
    "FormatError",
    "save_model",
    "load_model",
    "read_header",
    "write_csv",
    "write_json",
    "fmt",
]

MAGIC = b"RBSPMDL\x00"
SCHEMA_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"f8": "<f8", "c16": "<c16", "i8": "<i8"}


class FormatError(ConfigError):
    """Unreadable or version-incompatible model file."""


def fmt(x) -> str:
    """Round-trip-safe decimal text for a real number (17 significant digits)."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dtype_tag(arr) -> str:
    if np.iscomplexobj(arr):
        return "c16"
    if np.issubdtype(arr.dtype, np.integer):
        return "i8"
    return "f8"


def _write_atomic(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_model(rbm: ReducedBasisModel, path, model_spec: dict, store_basis=True) -> Path:
    """Write ``rbm`` to ``path``.

    ``model_spec`` identifies the Hamiltonian family (``kind``, ``Nx``,
    ``Ny``, ``domain``) so that a reader can rebuild the coefficient
    functions.  With ``store_basis=False`` the basis is dropped and the file
    size no longer depends on the Hilbert dimension.
    """
    path = Path(path)
    arrays = {
        "gram": rbm.gram,
        "h": rbm.h,
        "hh": rbm.hh,
        "res_factor": rbm.res_factor,
        "res_rows": np.asarray(rbm.res_rows, dtype=np.int64),
    }
    if store_basis and rbm.basis is not None:
        arrays["basis"] = rbm.basis
    for name, blocks in rbm.observables.items():
        arrays[f"obs/{name}"] = blocks

    directory = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        tag = _dtype_tag(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        directory.append({"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset,
                          "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "schema_version": SCHEMA_VERSION,
        "n_terms": rbm.n_terms,
        "dim": rbm.dim,
        "N": rbm.N,
        "has_basis": "basis" in arrays,
        "model": _jsonable(model_spec),
        "meta": _jsonable(rbm.meta),
        "samples": [{"mu": _jsonable(mu), "m": int(m), "added": int(a)} for mu, m, a in rbm.samples],
        "history": _jsonable(rbm.history),
        "arrays": directory,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    pad = (-(_PREFIX.size + len(hbytes))) % 8
    payload = b"".join([_PREFIX.pack(MAGIC, SCHEMA_VERSION, len(hbytes)), hbytes, b"\x00" * pad, *blobs])
    _write_atomic(path, payload)
    return path


def _read_prefix(fh, path):
    raw = fh.read(_PREFIX.size)
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short to be a model file")
    magic, version, hlen = _PREFIX.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic bytes)")
    if version != SCHEMA_VERSION:
        raise FormatError(f"{path}: schema version {version} is not supported (expected {SCHEMA_VERSION})")
    return hlen


def read_header(path) -> dict:
    """Metadata of a model file without loading any array."""
    path = Path(path)
    with open(path, "rb") as fh:
        hlen = _read_prefix(fh, path)
        try:
            return json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt header: {exc}") from exc


def load_model(path):
    """Read a model file; returns ``(rbm, header)``.

    Loaded models evaluate and lift (when the basis was stored) but cannot
    be extended further.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        hlen = _read_prefix(fh, path)
        header = json.loads(fh.read(hlen).decode("utf-8"))
        start = _PREFIX.size + hlen + ((-(_PREFIX.size + hlen)) % 8)
        fh.seek(0, os.SEEK_END)
        size = fh.tell()
        arrays = {}
        for entry in header["arrays"]:
            if start + entry["offset"] + entry["nbytes"] > size:
                raise FormatError(f"{path}: truncated data block {entry['name']!r}")
            fh.seek(start + entry["offset"])
            data = fh.read(entry["nbytes"])
            arr = np.frombuffer(data, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
            arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    rbm = ReducedBasisModel(
        n_terms=int(header["n_terms"]),
        dim=int(header["dim"]),
        basis=arrays.get("basis"),
        gram=arrays["gram"],
        h=arrays["h"],
        hh=arrays["hh"],
        res_factor=arrays["res_factor"],
        res_rows=arrays["res_rows"].astype(int),
        observables={k[4:]: v for k, v in arrays.items() if k.startswith("obs/")},
        samples=[(np.array(s["mu"], dtype=float), s["m"], s["added"]) for s in header["samples"]],
        history=header["history"],
        meta=header["meta"],
    )
    return rbm, header


def write_csv(path, columns, rows) -> Path:
    """Write a header row and data rows; floats use :func:`fmt`."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path
