"""Binary recording (NDTS) and checkpoint (NDCK) formats, CSV ingestion, atomic writes.

NDTS, all little-endian::

    b"NDTS" | u32 version=1 | u32 C | u64 T | f64 sample_rate_hz
    | C x (u16 byte length, UTF-8 name) | C*T f64, channel-major

NDCK::

    b"NDCK" | u32 version=1 | u32 count
    | count x (u16 name length, UTF-8 name, u8 rank, rank x u64 dims, f64 data)

with a JSON sidecar at ``<path>.meta.json``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from neurodyn.errors import ContractError, NeurodynError
from neurodyn.sigproc import Recording

NDTS_MAGIC = b"NDTS"
NDCK_MAGIC = b"NDCK"
VERSION = 1


class FormatError(NeurodynError, ValueError):
    """A file does not follow the expected layout."""


# -- atomic output ------------------------------------------------------------

def atomic_write_bytes(path, payload: bytes) -> Path:
    """Write to a temp file in the target directory, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def to_plain(obj):
    """JSON-ready copy: numpy values to Python, objects via ``to_dict``, inf/nan as strings."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset, np.ndarray)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write_json(path, obj) -> Path:
    return atomic_write_bytes(path, dumps_json(obj).encode("utf-8"))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# -- NDTS -----------------------------------------------------------------------

def encode_recording(rec: Recording) -> bytes:
    C, T = rec.data.shape
    out = [NDTS_MAGIC, struct.pack("<IIQd", VERSION, C, T, rec.sample_rate_hz)]
    for name in rec.channel_names:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ContractError(f"channel name longer than 65535 bytes: {name[:20]}...")
        out += [struct.pack("<H", len(raw)), raw]
    out.append(np.ascontiguousarray(rec.data, dtype="<f8").tobytes())
    return b"".join(out)


def decode_recording(buf: bytes) -> Recording:
    view = memoryview(buf)
    if bytes(view[:4]) != NDTS_MAGIC:
        raise FormatError("not an NDTS file (bad magic)")
    try:
        version, C, T, rate = struct.unpack_from("<IIQd", view, 4)
    except struct.error:
        raise FormatError("truncated NDTS header") from None
    if version != VERSION:
        raise FormatError(f"unsupported NDTS version {version}")
    pos = 4 + struct.calcsize("<IIQd")
    names = []
    for _ in range(C):
        if pos + 2 > len(view):
            raise FormatError("truncated NDTS channel table")
        (n,) = struct.unpack_from("<H", view, pos)
        pos += 2
        if pos + n > len(view):
            raise FormatError("truncated NDTS channel name")
        names.append(bytes(view[pos:pos + n]).decode("utf-8"))
        pos += n
    need = C * T * 8
    if len(view) - pos != need:
        raise FormatError(f"NDTS payload holds {len(view) - pos} bytes, expected {need}")
    data = np.frombuffer(view[pos:], dtype="<f8").astype(np.float64).reshape(C, T)
    return Recording(tuple(names), rate, data)


def write_recording(path, rec: Recording) -> Path:
    return atomic_write_bytes(path, encode_recording(rec))


def read_recording(path) -> Recording:
    return decode_recording(Path(path).read_bytes())


def read_csv(path, rate) -> Recording:
    """Header row = channel names; one row per sample."""
    if rate is None or not rate > 0:
        raise ContractError("CSV input needs a positive --rate")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise FormatError("CSV needs a header row and at least one sample")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"non-numeric CSV value: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise FormatError("CSV rows and header differ in width")
    return Recording(tuple(header), float(rate), data.T)


def write_csv(path, rec: Recording) -> Path:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(rec.channel_names)
    for row in rec.data.T:
        w.writerow([repr(float(v)) for v in row])
    return atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def load_recording(path, rate=None) -> Recording:
    """NDTS by default; ``.csv`` files go through :func:`read_csv`."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv(path, rate)
    return read_recording(path)


def save_recording(path, rec: Recording) -> Path:
    path = Path(path)
    return write_csv(path, rec) if path.suffix.lower() == ".csv" else write_recording(path, rec)


# -- NDCK -------------------------------------------------------------------------

def encode_checkpoint(tensors: dict) -> bytes:
    out = [NDCK_MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        raw = str(name).encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 255:
            raise ContractError(f"tensor {name!r} exceeds the name length or rank limit")
        out += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> dict:
    view = memoryview(buf)
    if bytes(view[:4]) != NDCK_MAGIC:
        raise FormatError("not an NDCK file (bad magic)")
    try:
        version, count = struct.unpack_from("<II", view, 4)
        if version != VERSION:
            raise FormatError(f"unsupported NDCK version {version}")
        pos = 12
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + n]).decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", view, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 8
            if pos + size > len(view):
                raise FormatError(f"truncated data for tensor {name!r}")
            tensors[name] = np.frombuffer(view[pos:pos + size], dtype="<f8").astype(np.float64).reshape(dims)
            pos += size
    except struct.error:
        raise FormatError("truncated NDCK file") from None
    if pos != len(view):
        raise FormatError("trailing bytes after the last NDCK tensor")
    return tensors


def meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def write_checkpoint(path, tensors: dict, meta: dict | None = None) -> Path:
    """Sidecar first, so a present checkpoint always has its metadata."""
    atomic_write_json(meta_path(path), meta or {})
    return atomic_write_bytes(path, encode_checkpoint(tensors))


def read_checkpoint(path):
    """``(tensors, meta)``; meta is ``{}`` when the sidecar is missing."""
    tensors = decode_checkpoint(Path(path).read_bytes())
    mp = meta_path(path)
    meta = read_json(mp) if mp.exists() else {}
    return tensors, meta


# -- model checkpoints ------------------------------------------------------------

def save_plrnn(path, params, extra=None):
    meta = {"kind": "plrnn", "variant": params.variant, **(extra or {})}
    return write_checkpoint(path, params.arrays(), meta)


def load_plrnn(path):
    from neurodyn.plrnn import PlrnnParams
    tensors, meta = read_checkpoint(path)
    if meta.get("kind") != "plrnn":
        raise FormatError(f"{path} is not a PLRNN checkpoint")
    return PlrnnParams(meta["variant"], **tensors), meta


def save_dae(path, params, extra=None):
    return write_checkpoint(path, params.arrays, {"kind": "dae", **(extra or {})})


def load_dae(path):
    from neurodyn.denoise import DaeParams
    tensors, meta = read_checkpoint(path)
    if meta.get("kind") != "dae":
        raise FormatError(f"{path} is not a DAE checkpoint")
    return DaeParams(tensors), meta


def save_mtl(path, params, extra=None):
    return write_checkpoint(path, params.arrays, {"kind": "mtl", **params.meta(), **(extra or {})})


def load_mtl(path):
    from neurodyn.multitask.model import MtlParams
    tensors, meta = read_checkpoint(path)
    if meta.get("kind") != "mtl":
        raise FormatError(f"{path} is not an MTL checkpoint")
    return MtlParams(tensors, meta["channels"], meta["d_model"], meta["n_heads"], meta["n_layers"]), meta
