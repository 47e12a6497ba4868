"""On-disk formats.

XT3 tensor file
    4 magic bytes ``58 54 33 00`` ("XT3\\0"), three little-endian uint64 dims,
    then ``p1*p2*p3`` little-endian float64 values, first index fastest
    (linear position ``i + p1*j + p1*p2*k`` with 0-based i, j, k).

Cross indices (JSON)
    ``{"dims": [p1, p2, p3], "omega": [[...], [...], [...]],
    "xi": [[[j, k], ...], [[k, i], ...], [[i, j], ...]], "xi_modes": [...],
    "seed": n}`` with **1-based** positions. ``seed`` is optional.

Cross observations
    4 magic bytes ``58 43 4f 00`` ("XCO\\0"), a little-endian uint64 header
    length, a UTF-8 JSON header holding the indices (as above) and the list of
    blocks with their shapes and lengths, then the body as a complete XT3
    record, then the three arm matrices as little-endian float64 in
    column-major order. Joint blocks are rows of the arms and are not stored.

All writers go through a temporary file in the destination directory followed
by an atomic rename.
"""

import contextlib
import json
import math
import os
import struct
import tempfile

import numpy as np

from ._validation import check_tensor3
from .cross_scheme import XI_MODES, CrossIndices, CrossObservations

XT3_MAGIC = b"XT3\x00"
XCO_MAGIC = b"XCO\x00"
_DIMS = struct.Struct("<3Q")
_LEN = struct.Struct("<Q")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


@contextlib.contextmanager
def atomic_write(path, mode="wb"):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _write_xt3_record(fh, x):
    fh.write(XT3_MAGIC)
    fh.write(_DIMS.pack(*x.shape))
    # x.T in C order is x in first-index-fastest order.
    x.T.astype("<f8", copy=False).tofile(fh)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}: wanted {n} bytes, got {len(data)}")
    return data


def _read_xt3_record(fh):
    if _read_exact(fh, 4, "XT3 magic") != XT3_MAGIC:
        raise FormatError("not an XT3 tensor (bad magic bytes)")
    dims = _DIMS.unpack(_read_exact(fh, _DIMS.size, "XT3 dims"))
    if min(dims) < 1:
        raise FormatError(f"XT3 dims must be positive, got {dims}")
    n = math.prod(dims)
    data = np.frombuffer(_read_exact(fh, 8 * n, "XT3 values"), dtype="<f8")
    x = data.reshape(dims, order="F").astype(np.float64)
    if not np.isfinite(x).all():
        raise FormatError("XT3 tensor holds non-finite values")
    return x


def write_xt3(path, x):
    x = check_tensor3(x)
    with atomic_write(path) as fh:
        _write_xt3_record(fh, x)


def read_xt3(path):
    with open(path, "rb") as fh:
        x = _read_xt3_record(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after XT3 tensor")
    return x


def indices_to_dict(idx):
    doc = {
        "dims": list(idx.dims),
        "omega": [(o + 1).tolist() for o in idx.omega],
        "xi": [(x + 1).tolist() for x in idx.xi],
        "xi_modes": [list(m) for m in XI_MODES],
    }
    if idx.seed is not None:
        doc["seed"] = idx.seed
    return doc


def indices_from_dict(doc):
    try:
        dims, omega, xi = doc["dims"], doc["omega"], doc["xi"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"cross indices document is missing {exc}") from exc
    modes = doc.get("xi_modes")
    if modes is not None and [tuple(m) for m in modes] != list(XI_MODES):
        raise FormatError(f"unexpected xi coordinate labels {modes}; expected {XI_MODES}")
    try:
        omega = [np.asarray(o, dtype=np.int64) - 1 for o in omega]
        xi = [np.asarray(x, dtype=np.int64).reshape(-1, 2) - 1 for x in xi]
        return CrossIndices(tuple(dims), omega, xi, seed=doc.get("seed"))
    except ValueError as exc:
        raise FormatError(f"invalid cross indices: {exc}") from exc


def write_indices(path, idx):
    with atomic_write(path, "w") as fh:
        json.dump(indices_to_dict(idx), fh, separators=(",", ":"))
        fh.write("\n")


def read_indices(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return indices_from_dict(doc)


def write_observations(path, obs):
    header = {
        "format": "cross-observations",
        "version": 1,
        "indices": indices_to_dict(obs.indices),
        "blocks": [{"name": "body", "encoding": "xt3", "shape": list(obs.body.shape),
                    "length": int(obs.body.size)}]
        + [
            {"name": f"arm{t}", "encoding": "f8le-colmajor", "shape": list(a.shape),
             "length": int(a.size)}
            for t, a in enumerate(obs.arms, start=1)
        ],
    }
    blob = json.dumps(header, separators=(",", ":")).encode()
    with atomic_write(path) as fh:
        fh.write(XCO_MAGIC)
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        _write_xt3_record(fh, obs.body)
        for a in obs.arms:
            fh.write(np.asarray(a, dtype="<f8").tobytes(order="F"))


def read_observations(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != XCO_MAGIC:
            raise FormatError(f"{path}: not a cross observations file (bad magic bytes)")
        (n,) = _LEN.unpack(_read_exact(fh, _LEN.size, "header length"))
        try:
            header = json.loads(_read_exact(fh, n, "header").decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt header ({exc})") from exc
        idx = indices_from_dict(header.get("indices"))
        body = _read_xt3_record(fh)
        arms = []
        for t, (p, g) in enumerate(zip(idx.dims, idx.g), start=1):
            raw = _read_exact(fh, 8 * p * g, f"arm {t}")
            arms.append(np.frombuffer(raw, dtype="<f8").reshape((p, g), order="F").astype(np.float64))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after the arm blocks")
    try:
        return CrossObservations(body, tuple(arms), idx)
    except ValueError as exc:
        raise FormatError(f"{path}: inconsistent observations ({exc})") from exc


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_json(path, doc):
    with atomic_write(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
        fh.write("\n")


def write_text(path, text):
    with atomic_write(path, "w") as fh:
        fh.write(text)
