"""Artifact writers: RFC-4180 CSV, JSON reports, manifests and binary replay files.

Floats are written with ``repr`` (shortest round-trip), so a value read back
with ``float()`` is bit-identical to the one written.  Every file is written
to a temporary name and moved into place.
"""
import csv
import hashlib
import io as _io
import json
import os
import struct
from pathlib import Path

import numpy as np

REPLAY_MAGIC = b"MVFREPLAY1\n"


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


def csv_bytes(header, columns):
    """Serialize aligned columns; ``columns`` is a list of equal-length sequences."""
    lengths = {len(c) for c in columns}
    if len(lengths) > 1:
        raise ValueError(f"columns have different lengths: {sorted(lengths)}")
    if len(header) != len(columns):
        raise ValueError("header and columns differ in length")
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([format_value(v) for v in row])
    return buf.getvalue().encode("utf-8")


def write_csv(path, header, columns):
    return _atomic_write(path, csv_bytes(header, columns))


def read_csv(path):
    """Header and float columns of a numeric CSV written by :func:`write_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}
    return header, cols


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    return obj


def json_bytes(obj):
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_json(path, obj):
    return _atomic_write(path, json_bytes(obj))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config):
    return hashlib.sha256(json_bytes(config)).hexdigest()


def write_manifest(out_dir, config, artifacts, extra=None):
    """Manifest listing every artifact with its content hash; no timestamps."""
    from . import __version__, kernels
    import platform
    import scipy

    out_dir = Path(out_dir)
    entries = []
    for p in sorted(Path(a) for a in artifacts):
        entries.append({"file": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size})
    manifest = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": config.get("seed"),
        "versions": {"mvfilter": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "kernel_backend": kernels.BACKEND,
        "artifacts": entries,
    }
    if extra:
        manifest.update(extra)
    return write_json(out_dir / "manifest.json", manifest)


def write_replay(path, arrays, header=None):
    """Binary replay file: magic, JSON header length, JSON header, raw little-endian float64.

    Layout is fully determined by the inputs (no timestamps, no compression).
    """
    meta = {"header": header or {}, "arrays": []}
    payload = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        meta["arrays"].append({"name": name, "shape": list(a.shape), "offset": offset})
        payload.append(a.tobytes())
        offset += a.nbytes
    head = json_bytes(meta)
    data = REPLAY_MAGIC + struct.pack("<Q", len(head)) + head + b"".join(payload)
    return _atomic_write(path, data)


def read_replay(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(REPLAY_MAGIC):
        raise ValueError(f"{path} is not a replay file")
    pos = len(REPLAY_MAGIC)
    (n,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    meta = json.loads(data[pos:pos + n])
    base = pos + n
    arrays = {}
    for spec in meta["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        start = base + spec["offset"]
        arrays[spec["name"]] = np.frombuffer(data, dtype="<f8", count=count,
                                             offset=start).reshape(spec["shape"])
    return meta["header"], arrays
