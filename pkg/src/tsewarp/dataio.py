"""On-disk formats: single-sample TSE files, dataset manifests, checkpoints.

TSE file (little-endian)::

    0   4s  magic  b"TSE1"
    4   u16 version (1)
    6   u32 T
    10  u32 N_f
    14  u8  dtype code (0 = float64, 1 = float32)
    15  5x  reserved, zero
    20      payload, T * N_f values, row-major (time-major)

Checkpoint file (little-endian)::

    0   4s  magic  b"TSCK"
    4   u16 version (1)
    6   u32 epoch
    10  u64 optimizer steps taken on C
    18  u64 optimizer steps taken on LogU
    26  u32 N_c, u32 T_c, u32 N_f
    38  32s sha256 of the training config
    70      float64 tensors C, LogU, m_C, v_C, m_LogU, v_LogU, each N_c*T_c*N_f

Manifest: ``manifest.csv`` with columns ``sample_id,path,label,split``.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DataError, FeatureWidthMismatch, Tse, TseError, validate_tse

TSE_MAGIC = b"TSE1"
TSE_VERSION = 1
_TSE_HEADER = struct.Struct("<4sHIIB5s")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}

CKPT_MAGIC = b"TSCK"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHIQQIII32s")
_CKPT_TENSORS = ("C", "log_u", "m_c", "v_c", "m_u", "v_u")

MANIFEST_NAME = "manifest.csv"
MANIFEST_FIELDS = ("sample_id", "path", "label", "split")
SPLITS = ("train", "val")


class BadMagic(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class HashMismatch(DataError):
    pass


class DatasetError(DataError):
    def __init__(self, failures):
        self.failures = list(failures)  # [(path, exception)]
        lines = [f"{p}: {e}" for p, e in self.failures]
        super().__init__(f"{len(lines)} file(s) failed to load:\n" + "\n".join(lines))


# ---------------------------------------------------------------------------
# TSE files
# ---------------------------------------------------------------------------

def encode_tse(data) -> bytes:
    arr = np.asarray(getattr(data, "data", data))
    if arr.ndim != 2:
        raise TseError(f"expected a 2-d array, got shape {arr.shape}")
    code = _DTYPE_CODES.get(arr.dtype, 0)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    return _TSE_HEADER.pack(TSE_MAGIC, TSE_VERSION, arr.shape[0], arr.shape[1], code, bytes(5)) + payload


def decode_tse(buf: bytes, *, id: str = "", label=None) -> Tse:
    if len(buf) < _TSE_HEADER.size:
        raise TruncatedPayload(f"file is {len(buf)} bytes, shorter than the {_TSE_HEADER.size}-byte header")
    magic, version, T, nf, code, _ = _TSE_HEADER.unpack_from(buf)
    if magic != TSE_MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {TSE_MAGIC!r}")
    if version != TSE_VERSION:
        raise UnsupportedVersion(f"unsupported TSE version {version}")
    if code not in _DTYPES:
        raise DataError(f"unknown dtype code {code}")
    dtype = _DTYPES[code]
    want = T * nf * dtype.itemsize
    got = len(buf) - _TSE_HEADER.size
    if got < want:
        raise TruncatedPayload(f"payload has {got} bytes, header implies {want}")
    if got > want:
        raise DataError(f"{got - want} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=dtype, count=T * nf, offset=_TSE_HEADER.size).reshape(T, nf)
    return validate_tse(arr.astype(dtype.newbyteorder("=")), id=id, label=label)


def write_tse(path, t) -> None:
    Path(path).write_bytes(encode_tse(t))


def read_tse(path, *, id: Optional[str] = None, label=None) -> Tse:
    path = Path(path)
    return decode_tse(path.read_bytes(), id=path.stem if id is None else id, label=label)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    samples: list  # list[Tse], labels are class indices
    splits: list  # split name per sample
    class_names: list
    n_features: int
    root: Optional[Path] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> list:
        return [s for s, sp in zip(self.samples, self.splits) if sp == name]

    def by_class(self, split: str = "train") -> list:
        out = [[] for _ in self.class_names]
        for s in self.split(split):
            out[s.label].append(s)
        return out

    def counts(self) -> dict:
        return {sp: len(self.split(sp)) for sp in SPLITS}


def write_manifest(root, records) -> None:
    with open(Path(root) / MANIFEST_NAME, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            w.writerow([r[k] for k in MANIFEST_FIELDS])


def read_manifest(root) -> list:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no {MANIFEST_NAME} in {root}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise DataError(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        records = list(reader)
    seen = set()
    for r in records:
        if r["sample_id"] in seen:
            raise DataError(f"duplicate sample_id {r['sample_id']!r}")
        seen.add(r["sample_id"])
        if r["split"] not in SPLITS:
            raise DataError(f"sample {r['sample_id']!r}: unknown split {r['split']!r}")
    return records


def load_dataset(root) -> Dataset:
    """Read every manifest entry; all per-file failures are reported together."""
    root = Path(root)
    records = read_manifest(root)
    class_names = []
    index = {}
    for r in records:
        if r["label"] not in index:
            index[r["label"]] = len(class_names)
            class_names.append(r["label"])
    samples, splits, failures = [], [], []
    widths = {}
    for r in records:
        path = root / r["path"]
        try:
            t = read_tse(path, id=r["sample_id"], label=index[r["label"]])
        except (OSError, TseError) as exc:
            failures.append((str(path), exc))
            continue
        widths.setdefault(t.n_features, str(path))
        samples.append(t)
        splits.append(r["split"])
    if failures:
        raise DatasetError(failures)
    if len(widths) > 1:
        (w0, p0), (w1, p1) = list(widths.items())[:2]
        raise FeatureWidthMismatch(w0, w1, f"{p0} has {w0} features, {p1} has {w1}")
    nf = next(iter(widths)) if widths else 0
    meta = {}
    for name in ("synth.json", "baseline.json"):
        side = root / name
        if side.exists():
            try:
                meta[side.stem] = json.loads(side.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise DataError(f"{side}: {exc}") from exc
    return Dataset(samples, splits, class_names, nf, root, meta)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def encode_checkpoint(state) -> bytes:
    C = np.asarray(state.C, dtype="<f8")
    n_c, t_c, nf = C.shape
    digest = bytes.fromhex(state.config_hash) if state.config_hash else bytes(32)
    header = _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, state.epoch, state.opt.step_c,
                               state.opt.step_u, n_c, t_c, nf, digest)
    tensors = (state.C, state.log_u, state.opt.m_c, state.opt.v_c, state.opt.m_u, state.opt.v_u)
    body = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in tensors)
    return header + body


def decode_checkpoint(buf: bytes, expected_hash: Optional[str] = None):
    from .trainer import AdamState, TrainState

    if len(buf) < _CKPT_HEADER.size:
        raise TruncatedPayload("checkpoint shorter than its header")
    magic, version, epoch, step_c, step_u, n_c, t_c, nf, digest = _CKPT_HEADER.unpack_from(buf)
    if magic != CKPT_MAGIC:
        raise BadMagic(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != CKPT_VERSION:
        raise UnsupportedVersion(f"unsupported checkpoint version {version}")
    size = n_c * t_c * nf
    want = size * 8 * len(_CKPT_TENSORS)
    got = len(buf) - _CKPT_HEADER.size
    if got < want:
        raise TruncatedPayload(f"checkpoint payload has {got} bytes, header implies {want}")
    if got > want:
        raise DataError(f"{got - want} trailing bytes after checkpoint payload")
    config_hash = digest.hex() if any(digest) else ""
    if expected_hash is not None and config_hash != expected_hash:
        raise HashMismatch(f"checkpoint config hash {config_hash[:12]} != current config {expected_hash[:12]}")
    arrays = []
    for k in range(len(_CKPT_TENSORS)):
        a = np.frombuffer(buf, dtype="<f8", count=size, offset=_CKPT_HEADER.size + k * size * 8)
        arrays.append(a.astype(np.float64).reshape(n_c, t_c, nf))
    C, log_u, m_c, v_c, m_u, v_u = arrays
    opt = AdamState(m_c=m_c, v_c=v_c, m_u=m_u, v_u=v_u, step_c=step_c, step_u=step_u)
    return TrainState(C=C, log_u=log_u, opt=opt, epoch=epoch, config_hash=config_hash)


def save_checkpoint(state, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(state))
    os.replace(tmp, path)


def load_checkpoint(path, expected_hash: Optional[str] = None):
    return decode_checkpoint(Path(path).read_bytes(), expected_hash)
