"""Backward pass of the weighted warp loss.

Per sample the loss is ``-log softmin(standardize(z))[y]`` where ``z`` holds
the weighted warp distance to every class centroid. The distance is a sum
of ``u * |c - m|`` over the cells of one optimal path, so its gradient
touches only the centroid timesteps on that path. Paths are supplied by the
caller (typically computed from a per-epoch frozen copy of the parameters)
and held fixed; the distance and its gradient are evaluated with the live
parameters along them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DegenerateProbability, PathShapeMismatch, WarpingPath
from .kernel import batch_decompose, batch_paths

STANDARDIZE_EPS = 1e-5


@dataclass
class GradPair:
    dC: np.ndarray  # (N_c, T_c, N_f)
    dU: np.ndarray  # gradient w.r.t. the positive weights U
    dLogU: np.ndarray  # dU * U


def standardize(z, eps: float = STANDARDIZE_EPS):
    """Zero-mean, unit-variance rescaling of each logit vector (last axis)."""
    z = np.asarray(z, dtype=np.float64)
    mu = z.mean(axis=-1, keepdims=True)
    var = ((z - mu) ** 2).mean(axis=-1, keepdims=True)
    return (z - mu) / np.sqrt(var + eps)


def standardize_backward(z, grad_out, eps: float = STANDARDIZE_EPS):
    """Vector-Jacobian product of :func:`standardize`."""
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    mu = z.mean(axis=-1, keepdims=True)
    var = ((z - mu) ** 2).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    zn = (z - mu) / sigma
    return (g - g.mean(axis=-1, keepdims=True) - zn * (g * zn).mean(axis=-1, keepdims=True)) / sigma


def softmin(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-(z - z.min(axis=-1, keepdims=True)))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmin(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = -(z - z.min(axis=-1, keepdims=True))
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_softmin(z, label: int, normalize: bool = True) -> float:
    """Scalar loss of one logit vector."""
    zz = standardize(z) if normalize else np.asarray(z, dtype=np.float64)
    return float(-log_softmin(zz)[label])


def loss_grad_wrt_distances(y, p) -> np.ndarray:
    """Gradient of ``CrossEntropy(y, softmin(z))`` with respect to ``z``.

    Softmin negates its input before the softmax, so the usual ``p - y`` of
    softmax cross-entropy flips to ``y - p``.
    """
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise DegenerateProbability(f"probabilities must lie strictly inside (0, 1), got {p}")
    return y - p


def backprop_pair(path: WarpingPath, u_c, c_c, m_sample, upstream: float):
    """``(dU_c, dC_c)`` for one (class, sample) pair along a fixed path."""
    u_c = np.asarray(u_c, dtype=np.float64)
    c_c = np.asarray(c_c, dtype=np.float64)
    m = np.asarray(getattr(m_sample, "data", m_sample), dtype=np.float64)
    if path.shape != (c_c.shape[0], m.shape[0]) or u_c.shape != c_c.shape or c_c.shape[1] != m.shape[1]:
        raise PathShapeMismatch(
            f"path for grid {path.shape} does not fit centroid {c_c.shape} and sample {m.shape}")
    dU = np.zeros_like(c_c)
    dC = np.zeros_like(c_c)
    diff = c_c[path.rows] - m[path.cols]
    np.add.at(dU, path.rows, upstream * np.abs(diff))
    np.add.at(dC, path.rows, upstream * u_c[path.rows] * np.sign(diff))
    return dU, dC


def full_backward(samples: Sequence, frozen, live, labels, *, engine: str = "wavefront",
                  allow_diagonal: bool = False, normalize: bool = True, workers=None, paths=None):
    """Mean loss over ``samples`` and its gradient w.r.t. the live parameters.

    ``frozen`` is ``(C_frozen, U_frozen)`` and only decides the warping paths;
    ``live`` is ``(C, LogU)``. Pass ``paths`` to reuse precomputed ones.
    Returns ``(loss, GradPair, z)`` where ``z`` are the live logits along the
    frozen paths.
    """
    C, log_u = (np.asarray(x, dtype=np.float64) for x in live)
    U = np.exp(log_u)
    Cf, Uf = (np.asarray(x, dtype=np.float64) for x in frozen)
    if Cf.shape != C.shape or Uf.shape != C.shape:
        raise PathShapeMismatch(f"frozen shapes {Cf.shape}/{Uf.shape} != live shape {C.shape}")
    if paths is None:
        paths = batch_paths(samples, Cf, Uf, engine=engine, allow_diagonal=allow_diagonal, workers=workers)
    S, B = batch_decompose(samples, C, paths)
    # per (sample, class): u * (c * S + B) is the live pointwise cost mass
    cost = C[None] * S + B
    z = np.einsum("sctf,ctf->sc", cost, U)

    labels = np.asarray(labels, dtype=np.int64)
    n_s = len(samples)
    zz = standardize(z) if normalize else z
    logp = log_softmin(zz)
    loss = float(-logp[np.arange(n_s), labels].mean())
    y = np.zeros_like(z)
    y[np.arange(n_s), labels] = 1.0
    # dL/dzz = y - p for softmin cross-entropy, averaged over the batch
    g = (y - np.exp(logp)) / n_s
    if normalize:
        g = standardize_backward(z, g)

    dU = np.zeros_like(C)
    dC = np.zeros_like(C)
    for s in range(n_s):
        dU += g[s][:, None, None] * cost[s]
        dC += g[s][:, None, None] * S[s]
    dC *= U
    return loss, GradPair(dC=dC, dU=dU, dLogU=dU * U), z
