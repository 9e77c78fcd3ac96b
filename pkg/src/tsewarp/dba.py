"""Barycenter averaging for centroid initialization.

Each iteration aligns every sample to the current centroid with unweighted
no-diagonal DTW, pools the sample rows matched to each centroid timestep
and replaces that centroid row by their per-feature lower median. With the
Manhattan pointwise cost the median minimizes the cost of the current
alignment, so the summed distance of the samples to the centroid never
increases from one iteration to the next.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DEFAULT_CENTROID_LEN, EmptyClass, FeatureWidthMismatch, resample_linear, rng_stream
from .kernel import batch_paths


@dataclass(frozen=True)
class DbaConfig:
    samples_per_class: int = 50
    iterations: int = 100
    centroid_len: int = DEFAULT_CENTROID_LEN
    seed: int = 0

    def __post_init__(self):
        for name in ("samples_per_class", "iterations", "centroid_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _lower_median(rows: np.ndarray) -> np.ndarray:
    k = rows.shape[0]
    return np.sort(rows, axis=0)[(k - 1) // 2]


def _dba_step(centroid, samples):
    """One alignment + median update; returns ``(new_centroid, objective_before)``."""
    paths = batch_paths(samples, centroid[None])
    objective = float(paths.distances.sum())
    groups = [[] for _ in range(centroid.shape[0])]
    for s, sample in enumerate(samples):
        p = paths.path(s, 0, centroid.shape[0], sample.shape[0])
        for t in range(centroid.shape[0]):
            groups[t].append(sample[p.cols[p.rows == t]])
    new = np.empty_like(centroid)
    for t, parts in enumerate(groups):
        new[t] = _lower_median(np.concatenate(parts, axis=0))
    return new, objective


def _sample_subset(class_samples, cfg: DbaConfig, stream_key: int):
    rng = rng_stream(cfg.seed, "dba", stream_key)
    k = min(cfg.samples_per_class, len(class_samples))
    idx = rng.choice(len(class_samples), size=k, replace=False)
    return [np.asarray(getattr(class_samples[i], "data", class_samples[i]), dtype=np.float64) for i in idx]


def init_centroid(class_samples: Sequence, cfg: DbaConfig = DbaConfig(), *, stream_key: int = 0,
                  return_objective: bool = False):
    """Barycenter of one class, shape ``(cfg.centroid_len, N_f)``.

    With ``return_objective=True`` also returns the summed unweighted warp
    distance of the subset to the centroid before the first iteration and
    after each one (``iterations + 1`` values).
    """
    if len(class_samples) == 0:
        raise EmptyClass(stream_key)
    samples = _sample_subset(class_samples, cfg, stream_key)
    nf = samples[0].shape[1]
    for s in samples:
        if s.shape[1] != nf:
            raise FeatureWidthMismatch(nf, s.shape[1], "DBA input")
    centroid = np.ascontiguousarray(resample_linear(samples[0], cfg.centroid_len))
    history = []
    for _ in range(cfg.iterations):
        new, objective = _dba_step(centroid, samples)
        history.append(objective)
        centroid = new
    if return_objective:
        history.append(float(batch_paths(samples, centroid[None]).distances.sum()))
        return centroid, np.array(history)
    return centroid


def init_all_centroids(dataset, cfg: DbaConfig = DbaConfig()) -> np.ndarray:
    """Stack of per-class centroids ``(N_c, T_c, N_f)`` in class-index order.

    ``dataset`` is either a :class:`~tsewarp.dataio.Dataset` (its training
    split is used) or a sequence of per-class sample lists.
    """
    if hasattr(dataset, "by_class"):
        per_class = dataset.by_class("train")
    else:
        per_class = list(dataset)
    out = []
    for c, members in enumerate(per_class):
        if len(members) == 0:
            raise EmptyClass(c)
        out.append(init_centroid(members, cfg, stream_key=c))
    return np.stack(out)
