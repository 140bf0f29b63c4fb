"""Binary matrix blocks and JSON manifests.

Block layout (all integers little endian)::

    offset  size  field
    0       6     magic b"HRMB1\\0"
    6       1     dtype code (1 = f64, 2 = i64)
    7       1     row-major flag (always 1 on write)
    8       8     n_rows (u64)
    16      8     n_cols (u64)
    24      8*n   payload, little-endian

A manifest is a JSON file listing blocks with their sha256 digests next to
the hyperparameters and seeds that produced them. Manifests carry no
timestamps so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HRMB1\0"
SCHEMA_VERSION = 1
_HEADER = struct.Struct("<6sBBQQ")
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {"f": 1, "i": 2, "u": 2, "b": 2}


class StoreError(Exception):
    """Base class for persistence failures."""


class TruncatedBlockError(StoreError):
    pass


class MagicMismatchError(StoreError):
    pass


class HashMismatchError(StoreError):
    pass


class MissingArtifactError(StoreError):
    pass


def encode_block(M) -> bytes:
    M = np.asarray(M)
    if M.ndim > 2:
        raise ValueError("blocks hold at most two dimensions")
    M2 = M if M.ndim == 2 else M.reshape(-1, 1)
    code = _CODES.get(M.dtype.kind)
    if code is None:
        raise TypeError(f"unsupported dtype {M.dtype}")
    rows, cols = M2.shape
    payload = np.ascontiguousarray(M2, dtype=_DTYPES[code]).tobytes(order="C")
    return _HEADER.pack(MAGIC, code, 1, rows, cols) + payload


def decode_block(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        if not MAGIC.startswith(bytes(buf[:6])):
            raise MagicMismatchError("not an HRMB1 block")
        raise TruncatedBlockError(f"header needs {_HEADER.size} bytes, got {len(buf)}")
    magic, code, row_major, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MagicMismatchError(f"bad magic {magic!r}")
    if code not in _DTYPES:
        raise StoreError(f"unknown dtype code {code}")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) < expected:
        raise TruncatedBlockError(f"payload needs {expected} bytes, got {len(buf)}")
    if len(buf) > expected:
        raise StoreError("trailing bytes after payload")
    flat = np.frombuffer(buf, dtype=_DTYPES[code], count=rows * cols, offset=_HEADER.size)
    if row_major:
        return flat.reshape(rows, cols).astype(_DTYPES[code].newbyteorder("="))
    return flat.reshape(cols, rows).T.astype(_DTYPES[code].newbyteorder("="))


def sha256_bytes(buf: bytes) -> str:
    return hashlib.sha256(buf).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_block(path, M) -> str:
    """Write ``M`` and return the sha256 of the file contents."""
    data = encode_block(M)
    _atomic_write(Path(path), data)
    return sha256_bytes(data)


def read_block(path) -> np.ndarray:
    return decode_block(Path(path).read_bytes())


# -- manifests ----------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    return x


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class Manifest:
    kind: str
    params: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # name -> {"path", "sha256", "shape"}
    meta: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    path: Path | None = None  # location on disk, not serialized

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "params": self.params,
            "seeds": self.seeds,
            "files": self.files,
            "meta": self.meta,
        }

    @property
    def root(self) -> Path:
        return self.path.parent if self.path is not None else Path(".")

    def load(self, name: str, verify: bool = True) -> np.ndarray:
        entry = self.files[name]
        fpath = self.root / entry["path"]
        if not fpath.exists():
            raise MissingArtifactError(f"{fpath} referenced by {self.path} is missing")
        buf = fpath.read_bytes()
        if verify and sha256_bytes(buf) != entry["sha256"]:
            raise HashMismatchError(f"{fpath}: content hash does not match manifest")
        return decode_block(buf).reshape(entry["shape"])


def write_artifact(directory, kind: str, arrays: dict, params=None, seeds=None,
                   meta=None, extra_files=None, name: str = "manifest.json") -> Manifest:
    """Write ``arrays`` as blocks under ``directory`` plus a manifest.

    ``extra_files`` maps names to already written files (relative to
    ``directory``) that should be hashed into the manifest as well.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for key in sorted(arrays):
        arr = np.asarray(arrays[key])
        fname = f"{key}.hrmb"
        digest = write_block(directory / fname, arr)
        files[key] = {"path": fname, "sha256": digest, "shape": list(arr.shape)}
    for key, rel in sorted((extra_files or {}).items()):
        files[key] = {"path": str(rel), "sha256": sha256_file(directory / rel), "shape": None}
    man = Manifest(kind, dict(params or {}), dict(seeds or {}), files, dict(meta or {}))
    man.path = directory / name
    _atomic_write(man.path, dumps(man.to_dict()).encode())
    return man


def read_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise MissingArtifactError(f"no manifest at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise StoreError(f"{path}: invalid JSON ({exc})") from None
    if "schema_version" not in doc or "kind" not in doc:
        raise StoreError(f"{path}: not a manifest (schema_version/kind missing)")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise StoreError(f"{path}: unsupported schema version {doc['schema_version']}")
    man = Manifest(doc["kind"], doc.get("params", {}), doc.get("seeds", {}),
                   doc.get("files", {}), doc.get("meta", {}), doc["schema_version"])
    man.path = path
    return man


def verify(path) -> Manifest:
    """Check every referenced file against its digest and decode every block."""
    man = read_manifest(path)
    for key, entry in sorted(man.files.items()):
        fpath = man.root / entry["path"]
        if not fpath.exists():
            raise MissingArtifactError(f"{fpath} referenced by {man.path} is missing")
        buf = fpath.read_bytes()
        if sha256_bytes(buf) != entry["sha256"]:
            raise HashMismatchError(f"{fpath}: content hash does not match manifest")
        if entry["path"].endswith(".hrmb"):
            decode_block(buf)
    return man


# -- reports ------------------------------------------------------------------


def csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\r\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({c: _csv_cell(r.get(c)) for c in columns})
    return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows: list[dict], columns: list[str]) -> None:
    _atomic_write(Path(path), csv_text(rows, columns).encode())


def write_json(path, obj) -> None:
    _atomic_write(Path(path), dumps(obj).encode())
