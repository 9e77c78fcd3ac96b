import numpy as np
import pytest

from tsewarp.dataio import load_dataset, write_manifest, write_tse
from tsewarp.kernel import batch_paths
from tsewarp.synth import PRESETS, SynthSpec, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_synth_dir(tmp_path_factory):
    return generate_synthetic(PRESETS["default"], tmp_path_factory.mktemp("synth-default"))


@pytest.fixture(scope="session")
def default_synth(default_synth_dir):
    return load_dataset(default_synth_dir)


SMALL_SPEC = SynthSpec(n_classes=3, n_features=6, centroid_len=4, samples_per_class=12, val_per_class=4,
                       length_range=(4, 9), distractor_features=2, seed=3)


@pytest.fixture(scope="session")
def small_synth_dir(tmp_path_factory):
    return generate_synthetic(SMALL_SPEC, tmp_path_factory.mktemp("synth-small"))


@pytest.fixture(scope="session")
def small_synth(small_synth_dir):
    return load_dataset(small_synth_dir)


def make_toy_dir(root, arrays_by_class, split_of=None):
    """Write ``{label: [array, ...]}`` as a dataset directory."""
    (root / "samples").mkdir(parents=True, exist_ok=True)
    records = []
    for label, arrays in arrays_by_class.items():
        for k, arr in enumerate(arrays):
            sid = f"{label}_{k}"
            rel = f"samples/{sid}.tse"
            write_tse(root / rel, np.asarray(arr, dtype=np.float64))
            split = split_of(label, k) if split_of else ("train" if k % 2 == 0 else "val")
            records.append({"sample_id": sid, "path": rel, "label": label, "split": split})
    write_manifest(root, records)
    return root


def well_separated_instance(rng, n_c=3, t_c=5, nf=3, lengths=(7, 9), margin=1e-3):
    """Random parameters whose frozen paths have no |c - m| below ``margin``."""
    while True:
        C = rng.normal(size=(n_c, t_c, nf))
        log_u = rng.normal(0.0, 0.3, size=C.shape)
        samples = [rng.normal(size=(k, nf)) for k in lengths]
        labels = rng.integers(n_c, size=len(samples))
        paths = batch_paths(samples, C, np.exp(log_u))
        ok = True
        for s, x in enumerate(samples):
            for c in range(n_c):
                p = paths.path(s, c, t_c, len(x))
                if np.abs(C[c][p.rows] - x[p.cols]).min() < margin:
                    ok = False
        if ok:
            return C, log_u, samples, labels, paths


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
