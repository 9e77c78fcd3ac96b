"""Nearest-centroid training with learnable per-timestep feature weights.

An epoch snapshots the centroids and weights (FECW), walks seeded
mini-batches, evaluates the loss along warping paths taken from the
snapshot, and applies AdamW to the log-weights and the centroids with a
per-epoch cosine learning rate.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import LOG_WEIGHT_BOUND, NonFiniteLoss, TseError, rng_stream
from .dba import DbaConfig, init_all_centroids
from .grad import full_backward, softmin, standardize
from .kernel import batch_distances

log = logging.getLogger(__name__)

WEIGHT_INIT_STD = 0.01


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 36
    batch_size: int = 48
    lr_logw: float = 8e-3
    lr_centroid_ratio: float = 1.0 / 3.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    weight_init: str = "one"  # "one" | "random"
    freeze_weights: bool = False
    freeze_centroids: bool = False
    allow_diagonal: bool = False
    fecw: bool = True
    normalize: bool = True
    topk: int = 5
    seed: int = 0
    # centroid initialization
    centroid_len: int = 8
    dba_samples_per_class: int = 50
    dba_iterations: int = 100

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr_logw < 0 or self.lr_centroid_ratio < 0:
            raise ValueError("learning rates must be >= 0")
        if self.weight_init not in ("one", "random"):
            raise ValueError("weight_init must be 'one' or 'random'")
        if self.topk < 1:
            raise ValueError("topk must be >= 1")

    @property
    def engine(self) -> str:
        return "reference" if self.allow_diagonal else "wavefront"

    @property
    def lr_centroid(self) -> float:
        return self.lr_logw * self.lr_centroid_ratio

    def dba(self) -> DbaConfig:
        return DbaConfig(self.dba_samples_per_class, self.dba_iterations, self.centroid_len, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class AdamState:
    m_c: np.ndarray
    v_c: np.ndarray
    m_u: np.ndarray
    v_u: np.ndarray
    step_c: int = 0
    step_u: int = 0

    @classmethod
    def zeros(cls, shape):
        return cls(*(np.zeros(shape) for _ in range(4)))

    def copy(self) -> "AdamState":
        return AdamState(self.m_c.copy(), self.v_c.copy(), self.m_u.copy(), self.v_u.copy(),
                         self.step_c, self.step_u)


@dataclass
class TrainState:
    C: np.ndarray  # (N_c, T_c, N_f)
    log_u: np.ndarray  # (N_c, T_c, N_f)
    opt: AdamState
    epoch: int = 0
    config_hash: str = ""

    @property
    def U(self) -> np.ndarray:
        return np.exp(self.log_u)

    def copy(self) -> "TrainState":
        return TrainState(self.C.copy(), self.log_u.copy(), self.opt.copy(), self.epoch, self.config_hash)


def init_state(centroids, cfg: TrainConfig) -> TrainState:
    C = np.array(centroids, dtype=np.float64)
    if cfg.weight_init == "random":
        log_u = rng_stream(cfg.seed, "weight-init").normal(0.0, WEIGHT_INIT_STD, size=C.shape)
    else:
        log_u = np.zeros_like(C)
    return TrainState(C, log_u, AdamState.zeros(C.shape), 0, cfg.hash())


def cosine_lr(base: float, epoch: int, epochs: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def adamw_step(param, grad, m, v, step, lr, betas, eps, weight_decay):
    """In-place AdamW update with bias correction; returns the new step count."""
    b1, b2 = betas
    step += 1
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** step)
    v_hat = v / (1.0 - b2 ** step)
    if weight_decay:
        param -= lr * weight_decay * param
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return step


def _labels(samples):
    labels = [s.label for s in samples]
    if any(l is None for l in labels):
        raise TseError("training and evaluation samples need labels")
    return np.asarray(labels, dtype=np.int64)


def predict(sample, C, U, *, allow_diagonal: bool = False, normalize: bool = True):
    """Class probabilities and raw logits for one sample."""
    z = batch_distances([sample], C, U, engine="reference" if allow_diagonal else "wavefront",
                        allow_diagonal=allow_diagonal)[0]
    p = softmin(standardize(z) if normalize else z)
    return p, z


def _nonfinite_class(z, grads):
    bad = ~np.isfinite(z).all(axis=0)
    for g in (grads.dC, grads.dU):
        bad |= ~np.isfinite(g).reshape(g.shape[0], -1).all(axis=1)
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else None


def train_epoch(state: TrainState, samples: Sequence, cfg: TrainConfig, *, workers=None):
    """One pass over ``samples``; returns ``(new_state, mean_loss)``."""
    state = state.copy()
    epoch = state.epoch
    labels = _labels(samples)
    frozen = (state.C.copy(), state.U) if cfg.fecw else None
    order = rng_stream(cfg.seed, "shuffle", epoch).permutation(len(samples))
    lr_u = cosine_lr(cfg.lr_logw, epoch, cfg.epochs)
    lr_c = cosine_lr(cfg.lr_centroid, epoch, cfg.epochs)
    total = 0.0
    for b, start in enumerate(range(0, len(order), cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        batch = [samples[i] for i in idx]
        snap = frozen if frozen is not None else (state.C, state.U)
        # non-finite values are caught just below, with diagnostics
        with np.errstate(invalid="ignore", over="ignore"):
            loss, grads, z = full_backward(batch, snap, (state.C, state.log_u), labels[idx],
                                           engine=cfg.engine, allow_diagonal=cfg.allow_diagonal,
                                           normalize=cfg.normalize, workers=workers)
        if not math.isfinite(loss) or not (np.isfinite(grads.dC).all() and np.isfinite(grads.dLogU).all()):
            raise NonFiniteLoss(f"non-finite loss/gradient at epoch {epoch}, batch {b}, "
                                f"class {_nonfinite_class(z, grads)}")
        if not cfg.freeze_weights:
            state.opt.step_u = adamw_step(state.log_u, grads.dLogU, state.opt.m_u, state.opt.v_u,
                                          state.opt.step_u, lr_u, cfg.betas, cfg.eps, cfg.weight_decay)
            np.clip(state.log_u, -LOG_WEIGHT_BOUND, LOG_WEIGHT_BOUND, out=state.log_u)
        if not cfg.freeze_centroids:
            state.opt.step_c = adamw_step(state.C, grads.dC, state.opt.m_c, state.opt.v_c,
                                          state.opt.step_c, lr_c, cfg.betas, cfg.eps, cfg.weight_decay)
        total += loss * len(idx)
    state.epoch = epoch + 1
    return state, total / max(len(samples), 1)


def dataset_loss(state: TrainState, samples: Sequence, cfg: TrainConfig, *, workers=None) -> float:
    """Mean loss with paths taken from the current parameters."""
    snap = (state.C, state.U)
    loss, _, _ = full_backward(samples, snap, (state.C, state.log_u), _labels(samples),
                               engine=cfg.engine, allow_diagonal=cfg.allow_diagonal,
                               normalize=cfg.normalize, workers=workers)
    return loss


@dataclass
class EvalResult:
    top1: float
    topk: float
    k: int
    per_class: dict  # class name -> {"n", "correct", "top1"}

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(state: TrainState, samples: Sequence, *, k: int = 5, class_names=None,
             allow_diagonal: bool = False, workers=None) -> EvalResult:
    """Top-1/top-k accuracy of nearest-centroid prediction.

    Standardization is strictly increasing per logit vector, so ranking the
    raw distances gives the same classes as ranking the normalized ones.
    Ties go to the lower class index.
    """
    n_c = state.C.shape[0]
    names = list(class_names) if class_names is not None else [str(c) for c in range(n_c)]
    if len(samples) == 0:
        return EvalResult(0.0, 0.0, min(k, n_c), {n: {"n": 0, "correct": 0, "top1": 0.0} for n in names})
    labels = _labels(samples)
    z = batch_distances(samples, state.C, state.U, engine="reference" if allow_diagonal else "wavefront",
                        allow_diagonal=allow_diagonal, workers=workers)
    rank = np.argsort(z, axis=1, kind="stable")
    kk = min(k, n_c)
    hit1 = rank[:, 0] == labels
    hitk = (rank[:, :kk] == labels[:, None]).any(axis=1)
    per_class = {}
    for c, name in enumerate(names):
        mask = labels == c
        n = int(mask.sum())
        correct = int(hit1[mask].sum())
        per_class[name] = {"n": n, "correct": correct, "top1": correct / n if n else 0.0}
    return EvalResult(float(hit1.mean()), float(hitk.mean()), kk, per_class)


@dataclass
class Report:
    config: dict
    epochs: list = field(default_factory=list)
    best_top1: float = -1.0
    best_topk: float = -1.0
    best_epoch: int = -1
    initial: Optional[dict] = None
    best_state: Optional[TrainState] = None
    final_state: Optional[TrainState] = None

    def summary(self) -> dict:
        return {"type": "summary", "best_top1": self.best_top1, "best_topk": self.best_topk,
                "best_epoch": self.best_epoch, "epochs_run": len(self.epochs),
                "fecw": self.config["fecw"], "allow_diagonal": self.config["allow_diagonal"],
                "freeze_weights": self.config["freeze_weights"],
                "freeze_centroids": self.config["freeze_centroids"],
                "weight_init": self.config["weight_init"]}


def run_training(dataset, cfg: TrainConfig, *, out_dir=None, init: Optional[TrainState] = None,
                 resume: Optional[TrainState] = None, workers=None) -> Report:
    """DBA init (unless given), then ``cfg.epochs`` epochs with validation.

    With ``out_dir`` the run writes ``report.jsonl`` (config, one record per
    epoch, summary), ``loss_log.tsv`` (timing-free, for reproducibility
    checks), ``best.ckpt`` and ``last.ckpt``.
    """
    from .dataio import save_checkpoint

    train = dataset.split("train")
    val = dataset.split("val")
    if resume is not None:
        state = resume.copy()
    elif init is not None:
        state = init_state(init.C, cfg) if isinstance(init, TrainState) else init_state(init, cfg)
    else:
        state = init_state(init_all_centroids(dataset, cfg.dba()), cfg)
    state.config_hash = cfg.hash()

    report = Report(cfg.to_dict())
    out = Path(out_dir) if out_dir is not None else None
    fh = loss_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "report.jsonl", "w", encoding="utf-8")
        loss_fh = open(out / "loss_log.tsv", "w", encoding="utf-8")
        fh.write(json.dumps({"type": "config", "config": report.config, "config_hash": cfg.hash()}) + "\n")
        loss_fh.write("epoch\ttrain_loss\tval_top1\tval_topk\n")

    def emit(rec):
        if fh is not None:
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

    try:
        ev0 = evaluate(state, val, k=cfg.topk, class_names=dataset.class_names,
                       allow_diagonal=cfg.allow_diagonal, workers=workers)
        report.initial = {"type": "initial", "val_top1": ev0.top1, "val_topk": ev0.topk}
        emit(report.initial)
        while state.epoch < cfg.epochs:
            t0 = time.perf_counter()
            state, loss = train_epoch(state, train, cfg, workers=workers)
            ev = evaluate(state, val, k=cfg.topk, class_names=dataset.class_names,
                          allow_diagonal=cfg.allow_diagonal, workers=workers)
            secs = time.perf_counter() - t0
            rec = {"type": "epoch", "epoch": state.epoch, "train_loss": loss, "val_top1": ev.top1,
                   "val_topk": ev.topk, "seconds": secs}
            report.epochs.append(rec)
            emit(rec)
            log.info("epoch %d loss %.6f val top1 %.4f top%d %.4f (%.2fs)",
                     state.epoch, loss, ev.top1, ev.k, ev.topk, secs)
            if loss_fh is not None:
                loss_fh.write(f"{state.epoch}\t{loss!r}\t{ev.top1!r}\t{ev.topk!r}\n")
                loss_fh.flush()
            if ev.top1 > report.best_top1:
                report.best_top1, report.best_epoch = ev.top1, state.epoch
                report.best_state = state.copy()
                if out is not None:
                    save_checkpoint(state, out / "best.ckpt")
            report.best_topk = max(report.best_topk, ev.topk)
            if out is not None:
                save_checkpoint(state, out / "last.ckpt")
        report.final_state = state
        emit(report.summary())
    finally:
        if fh is not None:
            fh.close()
            loss_fh.close()
    return report


def override(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
