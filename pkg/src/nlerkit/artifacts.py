"""Self-describing binary container plus textual sidecar metadata.

Layout (all little-endian):

    magic   8 bytes  b"NLERFS01"
    u32     container version (1)
    u32     record count
    then per record:
        u32      name length, followed by that many ascii bytes
        u32      dtype code (0 = float64, 1 = int32)
        u32      ndim
        u64[n]   dims
        payload  prod(dims) elements

Every write goes to a temp file and is renamed into place. A sidecar text
file at ``<path>.meta`` carries ``key = value`` lines (config hash, seed,
creation time, git revision, free-form entries); the sidecar is
human-readable and excluded from bit-exactness guarantees.
"""

import os
import struct
import subprocess
import time

import numpy as np

MAGIC = b"NLERFS01"
VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i4")}
_DTYPE_CODES = {"float64": 0, "int32": 1}


class ArtifactError(Exception):
    pass


def _dtype_code(arr):
    if arr.dtype == np.float64:
        return 0
    if arr.dtype == np.int32:
        return 1
    raise ArtifactError(f"unsupported array dtype {arr.dtype}; cast to float64 or int32")


def write_artifact(path, records, meta=None):
    """Write named arrays and the sidecar; records preserve insertion order."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(records)))
        for name, arr in records.items():
            arr = np.ascontiguousarray(arr)
            code = _dtype_code(arr)
            raw = name.encode("ascii")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(_DTYPES[code], copy=False).tobytes())
    os.replace(tmp, path)
    if meta is not None:
        write_sidecar(f"{path}.meta", meta)


def read_artifact(path):
    """Read back (records, meta); meta is {} when no sidecar exists."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ArtifactError(f"{path}: bad magic, not an artifact file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ArtifactError(f"{path}: unsupported container version {version}")
        records = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("ascii")
            code, ndim = struct.unpack("<II", fh.read(8))
            dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            dtype = _DTYPES[code]
            n_items = int(np.prod(dims)) if dims else 1
            buf = fh.read(n_items * dtype.itemsize)
            if len(buf) != n_items * dtype.itemsize:
                raise ArtifactError(f"{path}: truncated payload for record {name!r}")
            records[name] = np.frombuffer(buf, dtype=dtype).reshape(dims).copy()
    meta = read_sidecar(f"{path}.meta") if os.path.exists(f"{path}.meta") else {}
    return records, meta


def write_sidecar(path, meta):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        for key in sorted(meta):
            fh.write(f"{key} = {meta[key]}\n")
    os.replace(tmp, path)


def read_sidecar(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" = ")
            meta[key] = value
    return meta


def git_revision():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5, check=False,
        )
        rev = out.stdout.strip()
        return rev if rev else "unknown"
    except OSError:  # pragma: no cover
        return "unknown"


def standard_meta(config_hash, data_hash, seed, **extra):
    meta = {
        "config_hash": config_hash,
        "data_hash": data_hash,
        "seed": seed,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "git_rev": git_revision(),
    }
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# delimiter-separated text tables (the plotting component's input format)
# ---------------------------------------------------------------------------


def write_table(path, columns, rows, header_meta=None):
    """Tab-separated table with optional '# key=value' comment header lines."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        if header_meta:
            for key in sorted(header_meta):
                fh.write(f"# {key}={header_meta[key]}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_format_cell(row[c]) for c in columns) + "\n")
    os.replace(tmp, path)


def _format_cell(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def read_table(path):
    """Parse a table written by write_table: (columns, rows, header meta)."""
    meta = {}
    rows = []
    columns = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value
                continue
            cells = line.split("\t")
            if columns is None:
                columns = cells
            else:
                rows.append(dict(zip(columns, cells)))
    if columns is None:
        raise ArtifactError(f"{path}: empty table")
    return columns, rows, meta
