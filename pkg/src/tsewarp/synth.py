"""Seeded synthetic TSE datasets standing in for encoder output.

Every class owns a smooth ``centroid_len x n_features`` template. A sample
is a random monotone re-timing of its template (each template step repeated
one or more times, or some steps dropped when the sample is shorter) plus
Gaussian noise. The trailing ``distractor_features`` columns are noise with
a larger spread, except for one (timestep, feature) slot per class holding a
class-specific spike. Down-weighting the noisy columns everywhere but at
the spikes is what a learned weight tensor can exploit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .core import rng_stream
from .dataio import load_dataset, write_manifest, write_tse


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 5
    n_features: int = 64
    centroid_len: int = 8
    samples_per_class: int = 100
    val_per_class: int = 40
    length_range: tuple = (12, 40)
    warp_strength: float = 0.5
    noise_sigma: float = 0.1
    distractor_features: int = 8
    seed: int = 7
    class_separation: float = 1.0
    distractor_noise_ratio: float = 10.0
    spike_height: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "length_range", tuple(int(v) for v in self.length_range))
        t_min, t_max = self.length_range
        if self.n_classes < 1 or self.n_features < 1 or self.centroid_len < 1:
            raise ValueError("n_classes, n_features and centroid_len must be >= 1")
        if not 0 <= self.val_per_class <= self.samples_per_class:
            raise ValueError("val_per_class must lie in [0, samples_per_class]")
        if t_min > t_max or 2 * t_min < self.centroid_len:
            raise ValueError("length_range must satisfy centroid_len/2 <= Tmin <= Tmax")
        if self.warp_strength < 0 or self.noise_sigma < 0:
            raise ValueError("warp_strength and noise_sigma must be >= 0")
        if not 0 <= self.distractor_features < self.n_features:
            raise ValueError("distractor_features must be < n_features")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


PRESETS = {
    "default": SynthSpec(),
    # all classes share one template; only the spikes in the noisy columns
    # tell them apart
    "weight-sensitive": SynthSpec(class_separation=0.0, spike_height=2.0),
}


def _smooth(rng, t_len, n_feat, scale):
    t = np.linspace(0.0, 1.0, t_len)[:, None]
    amp = rng.normal(0.0, 1.0, size=(2, n_feat))
    phase = rng.uniform(0.0, 2 * np.pi, size=(2, n_feat))
    freq = np.array([0.5, 1.0])[:, None]
    out = amp[0] * np.sin(2 * np.pi * freq[0] * t + phase[0]) + amp[1] * np.sin(2 * np.pi * freq[1] * t + phase[1])
    return scale * out / np.sqrt(2.0)


def class_templates(spec: SynthSpec):
    """Templates ``(N_c, T_c, N_f)`` and spike slots ``[(t, f), ...]``."""
    rng = rng_stream(spec.seed, "synth-template")
    n_inf = spec.n_features - spec.distractor_features
    base = _smooth(rng, spec.centroid_len, n_inf, 1.0)
    templates = np.zeros((spec.n_classes, spec.centroid_len, spec.n_features))
    spikes = []
    for k in range(spec.n_classes):
        templates[k, :, :n_inf] = base + _smooth(rng, spec.centroid_len, n_inf, spec.class_separation)
        if spec.distractor_features:
            t = int(rng.integers(spec.centroid_len))
            f = n_inf + k % spec.distractor_features
            templates[k, t, f] = spec.spike_height
            spikes.append((t, f))
    return templates, spikes


def warp_indices(rng, t_c: int, length: int, warp_strength: float) -> np.ndarray:
    """Monotone map from ``length`` sample steps onto template steps."""
    if length >= t_c:
        p = np.exp(warp_strength * rng.normal(size=t_c))
        repeats = 1 + rng.multinomial(length - t_c, p / p.sum())
        return np.repeat(np.arange(t_c), repeats)
    return np.sort(rng.choice(t_c, size=length, replace=False))


def synth_sample(spec: SynthSpec, templates, k: int, idx: int) -> np.ndarray:
    rng = rng_stream(spec.seed, "synth-sample", k, idx)
    t_min, t_max = spec.length_range
    length = int(rng.integers(t_min, t_max + 1))
    x = templates[k][warp_indices(rng, spec.centroid_len, length, spec.warp_strength)].copy()
    sigma = np.full(spec.n_features, spec.noise_sigma)
    if spec.distractor_features:
        sigma[-spec.distractor_features:] *= spec.distractor_noise_ratio
    x += rng.normal(size=x.shape) * sigma
    return x


def generate_synthetic(spec: SynthSpec, out_dir) -> Path:
    """Write the dataset (``samples/*.tse``, ``manifest.csv``, ``synth.json``)."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    templates, _ = class_templates(spec)
    n_train = spec.samples_per_class - spec.val_per_class
    records = []
    for k in range(spec.n_classes):
        for idx in range(spec.samples_per_class):
            split = "train" if idx < n_train else "val"
            sid = f"c{k:02d}_{idx:04d}"
            rel = f"samples/{sid}.tse"
            write_tse(out / rel, synth_sample(spec, templates, k, idx))
            records.append({"sample_id": sid, "path": rel, "label": f"class_{k}", "split": split})
    write_manifest(out, records)
    (out / "synth.json").write_text(spec.to_json() + "\n", encoding="utf-8")
    return out


def synthetic_dataset(spec: SynthSpec, out_dir):
    return load_dataset(generate_synthetic(spec, out_dir))


def with_overrides(spec: SynthSpec, **kw) -> SynthSpec:
    return replace(spec, **kw)
