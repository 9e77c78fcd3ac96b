"""Domain types, validation and small deterministic helpers.

Everything else in the package passes sequences around as :class:`Tse`
objects (a ``T x N_f`` float matrix plus id/label) and class parameters as
plain ``(N_c, T_c, N_f)`` arrays.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_CENTROID_LEN = 8
LOG_WEIGHT_BOUND = 30.0


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class TseError(ValueError):
    """Base class for all library errors."""


class DataError(TseError):
    """Malformed input data (CLI exit code 2)."""


class NumericError(TseError):
    """Numerical failure during computation (CLI exit code 3)."""


class EmptySequence(DataError):
    pass


class FeatureWidthMismatch(DataError):
    def __init__(self, expected, got, where=""):
        self.expected = expected
        self.got = got
        msg = f"feature width mismatch: expected {expected}, got {got}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)


class NonFiniteValue(DataError):
    def __init__(self, index):
        self.index = tuple(int(i) for i in index)
        super().__init__(f"non-finite value at index {self.index}")


class ShapeMismatch(DataError):
    pass


class PathShapeMismatch(DataError):
    pass


class EmptyClass(DataError):
    def __init__(self, class_index=None):
        self.class_index = class_index
        if class_index is None:
            super().__init__("class has no samples")
        else:
            super().__init__(f"class {class_index} has no samples")


class DegenerateProbability(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

def _frozen(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Tse:
    """One temporal sequence of embeddings, ``data`` has shape ``(T, N_f)``."""

    data: np.ndarray
    id: str = ""
    label: Optional[int] = None

    def __post_init__(self):
        if not (isinstance(self.data, np.ndarray) and not self.data.flags.writeable):
            object.__setattr__(self, "data", _frozen(self.data, np.result_type(self.data, np.float32)))

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def n_features(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.data.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Tse):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def with_data(self, data) -> "Tse":
        return Tse(data, id=self.id, label=self.label)


@dataclass(frozen=True)
class CentroidSet:
    data: np.ndarray  # (N_c, T_c, N_f)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ShapeMismatch(f"centroids must be 3-d, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue(np.argwhere(~np.isfinite(self.data))[0])

    @property
    def n_classes(self) -> int:
        return self.data.shape[0]

    @property
    def centroid_len(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LogWeightSet:
    log_data: np.ndarray  # (N_c, T_c, N_f)

    def __post_init__(self):
        if not np.all(np.isfinite(self.log_data)):
            raise NonFiniteValue(np.argwhere(~np.isfinite(self.log_data))[0])
        if np.any(np.abs(self.log_data) > LOG_WEIGHT_BOUND):
            raise TseError(f"log weights must lie in [-{LOG_WEIGHT_BOUND}, {LOG_WEIGHT_BOUND}]")

    def weights(self) -> np.ndarray:
        return np.exp(self.log_data)


@dataclass(frozen=True, eq=False)
class WarpingPath:
    """Cells ``(i, j)`` of an alignment, ``i`` indexes the first sequence."""

    rows: np.ndarray
    cols: np.ndarray
    shape: tuple = field(default=(0, 0))

    @classmethod
    def from_cells(cls, cells, shape=None) -> "WarpingPath":
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        if shape is None:
            shape = (int(cells[-1, 0]) + 1, int(cells[-1, 1]) + 1)
        return cls(cells[:, 0].copy(), cells[:, 1].copy(), tuple(shape))

    @property
    def cells(self) -> list:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        if not isinstance(other, WarpingPath):
            return NotImplemented
        return self.shape == other.shape and self.cells == other.cells

    def is_valid(self, allow_diagonal: bool = False) -> bool:
        return not path_violations(self, allow_diagonal)


def path_violations(path: WarpingPath, allow_diagonal: bool = False) -> list:
    """Return a list of human readable problems; empty when the path is valid."""
    n, m = path.shape
    problems = []
    if len(path) == 0:
        return ["empty path"]
    if (path.rows[0], path.cols[0]) != (0, 0):
        problems.append(f"starts at {(int(path.rows[0]), int(path.cols[0]))}")
    if (path.rows[-1], path.cols[-1]) != (n - 1, m - 1):
        problems.append(f"ends at {(int(path.rows[-1]), int(path.cols[-1]))}, expected {(n - 1, m - 1)}")
    di = np.diff(path.rows)
    dj = np.diff(path.cols)
    ok_steps = ((di == 1) & (dj == 0)) | ((di == 0) & (dj == 1))
    if allow_diagonal:
        ok_steps |= (di == 1) & (dj == 1)
    bad = np.flatnonzero(~ok_steps)
    if bad.size:
        problems.append(f"illegal step after cell {int(bad[0])}")
    if not allow_diagonal and len(path) != n + m - 1:
        problems.append(f"length {len(path)} != n+m-1 = {n + m - 1}")
    return problems


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def validate_tse(raw, expected_nf: Optional[int] = None, *, id: str = "", label=None) -> Tse:
    data = np.asarray(raw)
    if data.ndim != 2:
        raise ShapeMismatch(f"expected a 2-d (T, N_f) matrix, got shape {data.shape}")
    if data.shape[0] == 0:
        raise EmptySequence(f"sequence {id!r} has no timesteps" if id else "sequence has no timesteps")
    if data.shape[1] == 0:
        raise FeatureWidthMismatch(expected_nf, 0, id)
    if expected_nf is not None and data.shape[1] != expected_nf:
        raise FeatureWidthMismatch(expected_nf, data.shape[1], id)
    if not np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float64)
    finite = np.isfinite(data)
    if not finite.all():
        raise NonFiniteValue(np.argwhere(~finite)[0])
    return Tse(data, id=id, label=label)


def resample_linear(t, target_len: int):
    """Linearly interpolate a sequence along time to ``target_len`` steps.

    Output step ``k`` samples the input at position ``k * (T-1) / (target_len-1)``
    so both endpoints are reproduced exactly. Accepts a :class:`Tse` or a
    raw ``(T, N_f)`` array and returns the same kind.
    """
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    is_tse = isinstance(t, Tse)
    x = np.asarray(t.data if is_tse else t, dtype=np.float64)
    n = x.shape[0]
    if target_len == n:
        out = x.copy()
    elif n == 1:
        out = np.repeat(x, target_len, axis=0)
    elif target_len == 1:
        out = x[:1].copy()
    else:
        pos = np.arange(target_len) * (n - 1) / (target_len - 1)
        lo = np.minimum(np.floor(pos).astype(np.int64), n - 2)
        frac = (pos - lo)[:, None]
        out = x[lo] * (1.0 - frac) + x[lo + 1] * frac
        out[-1] = x[-1]
    return t.with_data(out) if is_tse else out


def stack_samples(samples: Sequence) -> tuple:
    """Pack variable-length sequences into one contiguous array.

    Returns ``(X, offsets, lengths)`` with sample ``s`` occupying
    ``X[offsets[s]:offsets[s] + lengths[s]]``.
    """
    arrays = [np.asarray(s.data if isinstance(s, Tse) else s, dtype=np.float64) for s in samples]
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    offsets = np.zeros(len(arrays), dtype=np.int64)
    if len(arrays):
        offsets[1:] = np.cumsum(lengths)[:-1]
        X = np.ascontiguousarray(np.concatenate(arrays, axis=0))
    else:
        X = np.zeros((0, 1))
    return X, offsets, lengths


def rng_stream(root_seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named consumer of the root seed.

    Streams are keyed by ``(root_seed, crc32(name), *keys)``, so adding a new
    consumer never shifts the draws of an existing one.
    """
    entropy = [int(root_seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    entropy.extend(int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
