import json
from pathlib import Path

import numpy as np
import pytest

from conftest import make_toy_dir
from tsewarp.cli import build_parser, main
from tsewarp.dataio import load_checkpoint, write_tse

GOLDEN = Path(__file__).parent / "golden"
SMALL = ["--set", "centroid_len=4", "--set", "dba_iterations=5", "--batch-size", "8"]


@pytest.fixture
def fixture_pair(tmp_path):
    write_tse(tmp_path / "a.tse", np.array([[0.0], [1.0], [2.0]]))
    write_tse(tmp_path / "b.tse", np.array([[0.0], [2.0]]))
    return tmp_path / "a.tse", tmp_path / "b.tse"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# --- help and usage ----------------------------------------------------------------

@pytest.mark.parametrize("cmd", ["main", "gen-synth", "init-centroids", "train", "eval", "dist", "bench"])
def test_help_matches_golden(cmd, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    code, out, _ = run(capsys, *([] if cmd == "main" else [cmd]), "--help")
    assert code == 0
    assert out == (GOLDEN / f"help_{cmd}.txt").read_text()


def test_help_documents_every_flag(capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    for name, parser in sub.choices.items():
        text = parser.format_help()
        for action in parser._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.option_strings and action.help is None:
                pytest.fail(f"{name} {action.option_strings} has no help text")


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["dist", "a.tse"], ["bench", "--repeat", "0"],
                                  ["bench", "--bogus"], ["train", "data", "--out", "x", "--epochs", "-1"]])
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert "error" in err


# --- dist ------------------------------------------------------------------------------

def test_dist_fixture_pair(fixture_pair, capsys):
    code, out, _ = run(capsys, "dist", *fixture_pair)
    assert code == 0 and out == "2.000000000000\n"
    code, out, _ = run(capsys, "dist", *fixture_pair, "--engine", "wavefront", "--path")
    assert out.splitlines() == ["2.000000000000", "(0,0) (1,0) (1,1) (2,1)"]


def test_dist_single_row_self(tmp_path, capsys):
    write_tse(tmp_path / "x.tse", np.array([[0.25, -1.0]]))
    code, out, _ = run(capsys, "dist", tmp_path / "x.tse", tmp_path / "x.tse")
    assert code == 0 and float(out) == 0.0


def test_dist_weights_and_diagonal(fixture_pair, tmp_path, capsys):
    write_tse(tmp_path / "w.tse", np.array([[1.0], [2.0], [1.0]]))
    code, out, _ = run(capsys, "dist", *fixture_pair, "--weights", tmp_path / "w.tse")
    assert out == "4.000000000000\n"
    code, out, _ = run(capsys, "dist", *fixture_pair, "--diagonal")
    assert code == 0 and float(out) == 1.0


def test_dist_flag_misuse_and_data_errors(fixture_pair, tmp_path, capsys):
    code, _, err = run(capsys, "dist", *fixture_pair, "--engine", "wavefront", "--diagonal")
    assert code == 1 and "reference" in err
    code, _, _ = run(capsys, "dist", tmp_path / "missing.tse", fixture_pair[1])
    assert code == 2
    bad = tmp_path / "bad.tse"
    bad.write_bytes(b"XXXX" + fixture_pair[0].read_bytes()[4:])
    assert run(capsys, "dist", bad, fixture_pair[1])[0] == 2
    write_tse(tmp_path / "wide.tse", np.zeros((2, 3)))
    assert run(capsys, "dist", fixture_pair[0], tmp_path / "wide.tse")[0] == 2
    write_tse(tmp_path / "neg.tse", -np.ones((3, 1)))
    assert run(capsys, "dist", *fixture_pair, "--weights", tmp_path / "neg.tse")[0] == 2


# --- dataset generation and training ------------------------------------------------

def test_gen_synth_is_deterministic_and_records_baseline(tmp_path, capsys):
    args = ["--set", "n_classes=2", "--set", "samples_per_class=6", "--set", "val_per_class=2",
            "--set", "n_features=5", "--set", "distractor_features=1", "--set", "length_range=[6,9]"]
    assert run(capsys, "gen-synth", tmp_path / "a", *args)[0] == 0
    assert run(capsys, "gen-synth", tmp_path / "b", *args)[0] == 0
    for p in sorted((tmp_path / "a").rglob("*")):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
    baseline = json.loads((tmp_path / "a" / "baseline.json").read_text())
    assert 0.0 <= baseline["unweighted_top1"] <= 1.0
    assert run(capsys, "gen-synth", tmp_path / "c", "--set", "colour=3")[0] == 1
    assert run(capsys, "gen-synth", tmp_path / "c", "--set", "distractor_features=99")[0] == 1


def test_train_one_epoch(tmp_path, small_synth_dir, capsys):
    code, out, _ = run(capsys, "train", small_synth_dir, "--out", tmp_path / "run", "--epochs", "1",
                       "--freeze-weights", "--weight-init", "one", *SMALL)
    assert code == 0
    echoed = json.loads(out.splitlines()[0])
    assert echoed["config"]["freeze_weights"] is True and echoed["config"]["epochs"] == 1
    summary = json.loads(out.splitlines()[-1])
    assert summary["epochs_run"] == 1 and summary["weight_init"] == "one"
    records = [json.loads(l) for l in (tmp_path / "run" / "report.jsonl").read_text().splitlines()]
    assert sum(r["type"] == "epoch" for r in records) == 1
    assert (tmp_path / "run" / "best.ckpt").exists()


def test_train_config_precedence(tmp_path, small_synth_dir, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 5, "lr_logw": 0.5, "seed": 4, "batch_size": 3}))
    code, out, _ = run(capsys, "train", small_synth_dir, "--out", tmp_path / "run", "--config", cfg,
                       "--set", "epochs=1", "--set", "seed=9", "--seed", "2", "--no-fecw",
                       "--set", "centroid_len=4", "--set", "dba_iterations=2")
    assert code == 0
    resolved = json.loads(out.splitlines()[0])["config"]
    assert resolved["epochs"] == 1 and resolved["seed"] == 2
    assert resolved["lr_logw"] == 0.5 and resolved["batch_size"] == 3 and resolved["fecw"] is False


def test_train_rejects_unknown_key(tmp_path, small_synth_dir, capsys):
    code, _, err = run(capsys, "train", small_synth_dir, "--out", tmp_path / "r", "--set", "momentum=1")
    assert code == 1 and "momentum" in err


def test_init_train_eval_resume(tmp_path, small_synth_dir, capsys):
    ck = tmp_path / "init.ckpt"
    code, _, _ = run(capsys, "init-centroids", small_synth_dir, "--out", ck, "--centroid-len", "4",
                     "--iterations", "5")
    assert code == 0 and load_checkpoint(ck).C.shape == (3, 4, 6)
    run_dir = tmp_path / "run"
    code, _, _ = run(capsys, "train", small_synth_dir, "--out", run_dir, "--init", ck, "--epochs", "2", *SMALL)
    assert code == 0
    code, out, _ = run(capsys, "eval", small_synth_dir, "--checkpoint", run_dir / "best.ckpt", "--topk", "2")
    res = json.loads(out)
    assert code == 0 and res["split"] == "val" and res["k"] == 2 and res["topk"] >= res["top1"]
    # resuming under a different config is refused
    code, _, err = run(capsys, "train", small_synth_dir, "--out", tmp_path / "r2", "--resume",
                       run_dir / "last.ckpt", "--epochs", "3", *SMALL, "--lr", "0.5")
    assert code == 2 and "hash" in err
    code, _, _ = run(capsys, "train", small_synth_dir, "--out", tmp_path / "r3", "--resume",
                     run_dir / "last.ckpt", "--epochs", "2", *SMALL)
    assert code == 0


def test_eval_shape_mismatch_is_data_error(tmp_path, small_synth_dir, capsys):
    ck = tmp_path / "init.ckpt"
    run(capsys, "init-centroids", small_synth_dir, "--out", ck, "--iterations", "1", "--centroid-len", "2")
    other = make_toy_dir(tmp_path / "toy", {"a": [np.zeros((3, 2))] * 2, "b": [np.ones((3, 2))] * 2})
    code, _, err = run(capsys, "eval", other, "--checkpoint", ck)
    assert code == 2 and "does not fit" in err


def test_missing_dataset_is_data_error(tmp_path, capsys):
    assert run(capsys, "train", tmp_path / "nothing", "--out", tmp_path / "r")[0] == 2


def test_numeric_failure_exits_3(tmp_path, capsys):
    arrays = {"big": [np.full((3, 1), 1e308)] * 2, "small": [np.zeros((3, 1))] * 2}
    root = make_toy_dir(tmp_path / "toy", arrays, split_of=lambda label, k: "train" if k == 0 else "val")
    code, _, err = run(capsys, "train", root, "--out", tmp_path / "r", "--epochs", "1",
                       "--set", "centroid_len=2", "--set", "dba_iterations=1")
    assert code == 3 and "non-finite" in err


def test_bench_small(capsys):
    code, out, _ = run(capsys, "bench", "--n", "8", "--m", "8", "--nf", "4", "--pairs", "4", "--repeat", "1")
    assert code == 0
    assert "speedup" in out and "max_rel_diff=0" in out


def test_bench_disagreement_exits_3(capsys, monkeypatch):
    import tsewarp.bench as bench

    real = bench._batch_wavefront_distances

    def skewed(*args):
        real(*args)
        args[-1][0] += 1.0

    monkeypatch.setattr(bench, "_batch_wavefront_distances", skewed)
    code, _, err = run(capsys, "bench", "--n", "4", "--m", "4", "--nf", "2", "--pairs", "2", "--repeat", "1")
    assert code == 3 and "disagree" in err
