"""Binary containers, window sampling, splits and normalisation.

Every artifact (zonal records, solver checkpoints, model checkpoints,
ensemble forecasts) is stored in one container layout::

    offset  size  field
    0       4     magic b"SLTD"
    4       2     format version (uint16, currently 1)
    6       2     reserved (zero)
    8       4     header length H in bytes (uint32)
    12      8     payload length P in bytes (uint64)
    20      H     UTF-8 JSON header
    20+H    P     payload: the arrays listed in the header, back to back

All integers and array data are little-endian.  The JSON header holds
``kind``, ``arrays`` (name, dtype, shape, offset, nbytes for each array in
payload order) and a free-form ``meta`` object (record interval,
normalisation, solver configuration, seed, ...).  Headers are validated
before any payload byte is interpreted.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, ConfigError, FormatError, TruncatedPayload, UnsupportedVersion

MAGIC = b"SLTD"
VERSION = 1
KINDS = ("zonal-record", "spectral-checkpoint", "model-checkpoint", "forecast")
_FIXED = struct.Struct("<4sHHIQ")
_DTYPES = {"f4": "<f4", "f8": "<f8", "c16": "<c16", "i8": "<i8", "u1": "|u1"}


def _le_dtype(arr):
    dt = arr.dtype
    if dt.kind == "f":
        return np.dtype("<f4") if dt.itemsize == 4 else np.dtype("<f8")
    if dt.kind == "c":
        return np.dtype("<c16")
    if dt.kind in "iu" and dt.itemsize > 1:
        return np.dtype("<i8")
    if dt.kind in "biu":
        return np.dtype("|u1")
    raise FormatError(f"unsupported array dtype {dt}")


def write_container(path, kind, arrays, meta=None):
    """Write ``arrays`` (name -> ndarray, order kept) with ``meta`` to ``path``."""
    if kind not in KINDS:
        raise FormatError(f"unknown container kind {kind!r}")
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = _le_dtype(arr)
        data = np.ascontiguousarray(arr, dtype=le).tobytes()
        entries.append(
            {"name": name, "dtype": le.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)}
        )
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {"kind": kind, "arrays": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_FIXED.pack(MAGIC, VERSION, 0, len(header), offset))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_header(fh):
    raw = fh.read(_FIXED.size)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"not an SLTD container (magic {raw[:4]!r})")
    if len(raw) < _FIXED.size:
        raise TruncatedPayload("file ends inside the fixed header")
    _, version, _, hlen, plen = _FIXED.unpack(raw)
    if version != VERSION:
        raise UnsupportedVersion(f"container version {version}; this reader supports {VERSION}")
    hbytes = fh.read(hlen)
    if len(hbytes) < hlen:
        raise TruncatedPayload("file ends inside the JSON header")
    try:
        header = json.loads(hbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt JSON header: {exc}") from None
    if header.get("kind") not in KINDS:
        raise FormatError(f"unknown container kind {header.get('kind')!r}")
    header["payload_length"] = plen
    return header


def read_container(path, kind=None):
    """Return ``(kind, arrays, meta)``; raises a :class:`FormatError` subclass on bad input."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open {path}: {exc}") from None
    with fh:
        header = read_header(fh)
        if kind is not None and header["kind"] != kind:
            raise FormatError(f"{path}: expected a {kind} container, found {header['kind']}")
        payload = fh.read(header["payload_length"])
    if len(payload) < header["payload_length"]:
        raise TruncatedPayload(
            f"{path}: payload has {len(payload)} of {header['payload_length']} bytes"
        )
    arrays = {}
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + count * dt.itemsize > len(payload) or count * dt.itemsize != e["nbytes"]:
            raise FormatError(f"{path}: array {e['name']} does not fit the payload")
        arrays[e["name"]] = np.frombuffer(payload, dtype=dt, count=count, offset=e["offset"]).reshape(
            e["shape"]
        ).copy()
    return header["kind"], arrays, header["meta"]


# --- zonal records -----------------------------------------------------------------


@dataclass
class ZonalData:
    """One or more zonal-mean trajectories on a shared time axis.

    ``U`` has shape ``(trajectories, T, N_y)``; ``times`` has length ``T``.
    ``meta`` carries the record interval, solver configuration, seed and
    (for datasets) the normalisation and split.
    """

    U: np.ndarray
    times: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.U = np.asarray(self.U)
        if self.U.ndim == 2:
            self.U = self.U[None]
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.U.ndim != 3 or self.U.shape[1] != len(self.times):
            raise ConfigError(f"U shape {self.U.shape} does not match {len(self.times)} times")

    @property
    def record_interval(self):
        if "record_interval" in self.meta:
            return float(self.meta["record_interval"])
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 1.0

    @property
    def n_y(self):
        return self.U.shape[-1]

    def __len__(self):
        return self.U.shape[1]

    def rows(self, start, stop):
        return ZonalData(self.U[:, start:stop], self.times[start:stop], dict(self.meta))

    @classmethod
    def from_records(cls, records, seed=None):
        """Stack :class:`slt.solver.ZonalRecord` members."""
        U = np.stack([r.U for r in records])
        meta = {
            "record_interval": records[0].record_interval,
            "solver": dict(records[0].config),
            "seed": seed if seed is not None else records[0].config.get("seed"),
            "members": [int(r.member) for r in records],
        }
        return cls(U, records[0].times, meta)


def write_record(path, data, dtype="f8"):
    """Store a :class:`ZonalData` (``dtype`` ``"f8"`` or ``"f4"``)."""
    if dtype not in ("f4", "f8"):
        raise ConfigError(f"record dtype must be f4 or f8, got {dtype}")
    U = np.asarray(data.U, dtype=_DTYPES[dtype])
    meta = dict(data.meta)
    meta.setdefault("record_interval", data.record_interval)
    write_container(path, "zonal-record", {"times": data.times, "U": U}, meta)


def read_record(path, dtype=np.float64):
    _, arrays, meta = read_container(path, "zonal-record")
    if "U" not in arrays or "times" not in arrays:
        raise FormatError(f"{path}: zonal record lacks U or times")
    return ZonalData(arrays["U"].astype(dtype), arrays["times"], meta)


def export_csv(path, arrays, meta=None):
    """Flatten named arrays to CSV: one column per 1-D array, or long format.

    1-D arrays of equal length become columns; otherwise each array is
    written as ``name,index...,value`` rows.
    """
    arrays = {k: np.asarray(v) for k, v in arrays.items()}
    lengths = {v.shape for v in arrays.values()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if all(v.ndim == 1 for v in arrays.values()) and len(lengths) == 1:
            w.writerow(list(arrays))
            for row in zip(*arrays.values()):
                w.writerow([_fmt(x) for x in row])
            return
        depth = max(v.ndim for v in arrays.values())
        w.writerow(["name"] + [f"i{j}" for j in range(depth)] + ["value"])
        for name, v in arrays.items():
            for idx in np.ndindex(v.shape):
                w.writerow([name] + list(idx) + [""] * (depth - len(idx)) + [_fmt(v[idx])])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x if isinstance(x, str) else str(x.item() if hasattr(x, "item") else x)


def container_to_csv(src, dst):
    """CSV export of any container's arrays (see :func:`export_csv`)."""
    _, arrays, _ = read_container(src)
    export_csv(dst, arrays)


# --- splitting, normalisation, windows ---------------------------------------------


def split(data, val_len):
    """``(train, validation)`` with validation the contiguous tail of every trajectory."""
    n = len(data)
    if not 0 <= val_len < n:
        raise ConfigError(f"val_len {val_len} must lie in [0, {n})")
    return data.rows(0, n - val_len), data.rows(n - val_len, n)


def normalization_stats(data):
    """Global scalar mean and std (floored at 1e-12) over all entries."""
    U = np.asarray(data.U if isinstance(data, ZonalData) else data, dtype=np.float64)
    if U.size == 0:
        raise ConfigError("normalization_stats needs a non-empty array")
    mean = float(U.mean())
    std = float(U.std())
    return mean, max(std, 1e-12)


def normalize(U, mean, std):
    return (np.asarray(U, dtype=np.float64) - mean) / std


class WindowSampler:
    """Uniform random ``(history, target)`` windows from one data view.

    A window is ``S`` consecutive rows plus the next row as target, all from
    one trajectory.  Rows with ``times < min_time`` (e.g. an unfinished
    spin-up) are never used.
    """

    def __init__(self, data, seq_len, rng, min_time=None):
        self.data = data
        self.seq_len = int(seq_len)
        self.rng = rng
        first = 0
        if min_time is not None:
            first = int(np.searchsorted(data.times, min_time - 1e-9))
        self.first = first
        self.n_starts = len(data) - first - self.seq_len
        if self.n_starts < 1:
            raise ConfigError(
                f"record of {len(data) - first} usable rows is too short for history {seq_len}"
            )

    @property
    def n_windows(self):
        return self.n_starts * self.data.U.shape[0]

    def starts(self, batch_size):
        """``(trajectory, start_row)`` index arrays of a batch."""
        flat = self.rng.integers(0, self.n_windows, size=batch_size)
        return flat // self.n_starts, self.first + flat % self.n_starts

    def gather(self, traj, start):
        idx = start[:, None] + np.arange(self.seq_len + 1)
        win = self.data.U[traj[:, None], idx]
        return win[:, :-1], win[:, -1]

    def sample(self, batch_size):
        traj, start = self.starts(batch_size)
        return self.gather(traj, start)


def sample_windows(sampler, batch_size):
    return sampler.sample(batch_size)


# --- forecasts and model checkpoints -----------------------------------------------------


def write_forecast(path, U, meta):
    """Ensemble forecast ``(members, horizon, N_y)`` plus provenance."""
    write_container(path, "forecast", {"U": np.asarray(U, dtype=np.float64)}, meta)


def read_forecast(path):
    _, arrays, meta = read_container(path, "forecast")
    return arrays["U"], meta


def save_model(path, model, extra=None):
    meta = {
        "config": model.config.to_dict(),
        "norm": {"mean": model.norm_mean, "std": model.norm_std},
    }
    meta.update(extra or {})
    write_container(path, "model-checkpoint", model.state_dict(), meta)


def load_model(path):
    from .model import ModelConfig, SLTModel

    _, arrays, meta = read_container(path, "model-checkpoint")
    model = SLTModel(ModelConfig.from_dict(meta["config"]), meta["norm"]["mean"], meta["norm"]["std"])
    model.load_state_dict(arrays)
    return model, meta


def write_tmp_then_rename(path, writer):
    """Run ``writer(tmp_path)`` and move the result into place."""
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
