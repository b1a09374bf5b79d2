import numpy as np
import pytest

from seqplace import neural
from seqplace.cli import load_match_csv, main
from seqplace.dataset import load_descriptor_file
from seqplace.evaluation import load_pr_csv, load_sweep_csv


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def synth_dataset(capsys, tmp_path, name="ds", **overrides):
    flags = {
        "frames": "40",
        "dim": "8",
        "smoothness": "0.3",
        "noise": "0.0",
        "seed": "11",
    }
    flags.update({k.replace("_", "-"): str(v) for k, v in overrides.items()})
    out = tmp_path / name
    argv = ["synth"]
    for key, value in flags.items():
        argv.extend([f"--{key}", value])
    argv.extend(["--out", str(out)])
    code, _, err = run(capsys, *argv)
    assert code == 0, err
    return out


def test_help_and_bad_command(capsys):
    assert run(capsys, "--help")[0] == 0
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "synth")[0] == 2  # missing --out


def test_synth_writes_dataset_deterministically(capsys, tmp_path):
    a = synth_dataset(capsys, tmp_path, "a")
    b = synth_dataset(capsys, tmp_path, "b")
    for fname in ("reference.spd1", "query.spd1", "reference_positions.txt", "manifest.txt"):
        assert (a / fname).read_bytes() == (b / fname).read_bytes()
    seq = load_descriptor_file(a / "reference.spd1")
    assert seq.data.shape == (40, 8)


def test_synth_usage_errors(capsys, tmp_path):
    code, _, err = run(capsys, "synth", "--frames", "1", "--out", str(tmp_path / "x"))
    assert code == 2
    assert "error:" in err
    code, _, err = run(
        capsys, "synth", "--revisit-at", "5", "--revisit-len", "10",
        "--frames", "30", "--out", str(tmp_path / "y"),
    )
    assert code == 2
    code, _, err = run(capsys, "synth", "--drift", "1,zap", "--out", str(tmp_path / "z"))
    assert code == 2


def test_synth_revisit(capsys, tmp_path):
    out = synth_dataset(
        capsys, tmp_path, "rev", frames="80", dim="16", revisit_at="50", revisit_len="20"
    )
    assert (out / "manifest.txt").exists()


def test_config_file_with_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nframes = 12\ndim = 6\n")
    out = tmp_path / "ds"
    code, _, err = run(
        capsys, "synth", "--config", str(cfg), "--frames", "15", "--out", str(out)
    )
    assert code == 0, err
    seq = load_descriptor_file(out / "reference.spd1")
    assert seq.data.shape == (15, 6)  # explicit --frames wins, dim comes from the file
    assert run(capsys, "synth", "--config", str(tmp_path / "nope.cfg"), "--out", "x")[0] == 2
    cfg.write_text("frames\n")
    assert run(capsys, "synth", "--config", str(cfg), "--out", str(out))[0] == 2


def _write_pgm(path, image):
    path.write_bytes(
        b"P5\n" + f"{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii") + image.tobytes()
    )


def test_extract(capsys, tmp_path):
    rng = np.random.default_rng(0)
    images = tmp_path / "imgs"
    images.mkdir()
    _write_pgm(images / "a.pgm", rng.integers(0, 256, size=(8, 12), dtype=np.uint8))
    _write_pgm(images / "b.pgm", rng.integers(0, 256, size=(8, 12), dtype=np.uint8))
    _write_pgm(images / "c.pgm", rng.integers(0, 256, size=(9, 13), dtype=np.uint8))
    out = tmp_path / "desc.spd1"
    code, stdout, err = run(
        capsys, "extract", "--images", str(images), "--out", str(out),
        "--width", "6", "--height", "4", "--patch", "2",
    )
    assert code == 0
    assert "cropping c.pgm" in err and "9x13" in err
    seq = load_descriptor_file(out)
    assert seq.data.shape == (3, 24)

    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(capsys, "extract", "--images", str(empty), "--out", str(out))[0] == 2
    assert run(capsys, "extract", "--images", str(tmp_path / "no"), "--out", str(out))[0] == 2
    (images / "bad.pgm").write_bytes(b"P5\n4 4\n255\nxx")
    code, _, err = run(
        capsys, "extract", "--images", str(images), "--out", str(out),
        "--width", "2", "--height", "2", "--patch", "2",
    )
    assert code == 3
    assert "bad.pgm" in err


def train_args(ds_dir, ckpt, curves, **overrides):
    flags = {"ds": "2", "epochs": "60", "hidden": "24", "seed": "0"}
    flags.update({k: str(v) for k, v in overrides.items()})
    argv = [
        "train",
        "--ref", str(ds_dir / "reference.spd1"),
        "--ref-positions", str(ds_dir / "reference_positions.txt"),
        "--out-checkpoint", str(ckpt),
        "--out-curves", str(curves),
    ]
    for key, value in flags.items():
        argv.extend([f"--{key}", value])
    return argv


def test_train_epochs_zero_writes_initial_checkpoint(capsys, tmp_path):
    ds = synth_dataset(capsys, tmp_path)
    ckpt = tmp_path / "init.spm1"
    code, stdout, err = run(
        capsys, *train_args(ds, ckpt, tmp_path / "curves.csv", epochs=0, hidden=16)
    )
    assert code == 0, err
    assert str(ckpt) in stdout
    expected = tmp_path / "expected.spm1"
    neural.save_checkpoint(neural.init_model(n=8, places=40, d_s=2, hidden=16, seed=0), expected)
    assert ckpt.read_bytes() == expected.read_bytes()
    assert (tmp_path / "curves.csv").read_text().startswith("epoch,loss,accuracy,seconds")


def test_train_usage_errors(capsys, tmp_path):
    ds = synth_dataset(capsys, tmp_path)
    assert run(capsys, *train_args(ds, tmp_path / "c", tmp_path / "v", ds=0))[0] == 2
    assert run(capsys, *train_args(ds, tmp_path / "c", tmp_path / "v", epochs=-1))[0] == 2
    bad = train_args(ds, tmp_path / "c", tmp_path / "v")
    bad[2] = str(tmp_path / "missing.spd1")
    assert run(capsys, *bad)[0] == 2


def test_training_divergence_exits_three(capsys, tmp_path, monkeypatch):
    ds = synth_dataset(capsys, tmp_path)

    def explode(*args, **kwargs):
        raise neural.TrainingError(epoch=3, batch=1)

    monkeypatch.setattr(neural, "train", explode)
    code, _, err = run(capsys, *train_args(ds, tmp_path / "c.spm1", tmp_path / "v.csv"))
    assert code == 3
    assert "non-finite loss at epoch 3" in err


def test_train_match_deep_pipeline(capsys, tmp_path):
    ds = synth_dataset(capsys, tmp_path)
    ckpt = tmp_path / "model.spm1"
    code, _, err = run(capsys, *train_args(ds, ckpt, tmp_path / "curves.csv"))
    assert code == 0, err

    # training is deterministic: a rerun writes the same checkpoint bytes
    ckpt2 = tmp_path / "model2.spm1"
    assert run(capsys, *train_args(ds, ckpt2, tmp_path / "curves2.csv"))[0] == 0
    assert ckpt.read_bytes() == ckpt2.read_bytes()

    out = tmp_path / "matches.csv"
    match_argv = [
        "match", "--method", "deep",
        "--ref", str(ds / "reference.spd1"),
        "--query", str(ds / "query.spd1"),
        "--query-positions", str(ds / "query_positions.txt"),
        "--checkpoint", str(ckpt),
        "--out", str(out),
    ]
    code, _, err = run(capsys, *match_argv)
    assert code == 0, err
    report, meta = load_match_csv(out)
    assert meta["method"] == "deep"
    assert meta["polarity"] == "higher"
    assert meta["ds"] == "2"
    hits = float(np.mean(report.best_ref == report.query_indices))
    assert hits >= 0.95

    out2 = tmp_path / "matches2.csv"
    assert run(capsys, *(match_argv[:-1] + [str(out2)]))[0] == 0
    assert out.read_bytes() == out2.read_bytes()

    # deep matching without the checkpoint or positions is a usage error
    assert run(capsys, *(match_argv[:9] + ["--out", str(out)]))[0] == 2
    no_pos = [a for a in match_argv if not a.endswith("query_positions.txt")]
    no_pos.remove("--query-positions")
    assert run(capsys, *no_pos)[0] == 2


def test_match_seqslam_ds1_is_row_argmin(capsys, tmp_path):
    ds = synth_dataset(capsys, tmp_path, noise="0.4")
    out = tmp_path / "matches.csv"
    matrix_path = tmp_path / "enhanced.spd1"
    code, _, err = run(
        capsys, "match", "--method", "seqslam", "--ds", "1",
        "--ref", str(ds / "reference.spd1"), "--query", str(ds / "query.spd1"),
        "--export-matrix", str(matrix_path), "--out", str(out),
    )
    assert code == 0, err
    report, meta = load_match_csv(out)
    assert meta["polarity"] == "lower"
    matrix = load_descriptor_file(matrix_path).data
    assert matrix.shape == (40, 40)
    assert np.array_equal(report.best_ref, np.argmin(matrix, axis=1))
    assert np.allclose(report.scores, matrix.min(axis=1), atol=1e-6)


def test_match_delta_and_flag_errors(capsys, tmp_path):
    ds = synth_dataset(capsys, tmp_path)
    out = tmp_path / "m.csv"
    code, _, err = run(
        capsys, "match", "--method", "delta", "--ds", "4",
        "--ref", str(ds / "reference.spd1"), "--query", str(ds / "query.spd1"),
        "--out", str(out),
    )
    assert code == 0, err
    report, meta = load_match_csv(out)
    assert meta["polarity"] == "lower"
    assert len(report) == 40 - 4 + 1  # trimmed half-window at each end
    assert report.query_indices[0] == 2 and report.query_indices[-1] == 38
    # delta has no matrix to export
    assert run(
        capsys, "match", "--method", "delta", "--ds", "4",
        "--ref", str(ds / "reference.spd1"), "--query", str(ds / "query.spd1"),
        "--export-matrix", str(tmp_path / "x.spd1"), "--out", str(out),
    )[0] == 2
    # seqslam without --ds
    assert run(
        capsys, "match", "--method", "seqslam",
        "--ref", str(ds / "reference.spd1"), "--query", str(ds / "query.spd1"),
        "--out", str(out),
    )[0] == 2


def write_match_csv(path, best_ref, scores, ds=2, polarity="higher"):
    with open(path, "w") as fh:
        fh.write(f"# method=test\n# polarity={polarity}\n# ds={ds}\n")
        fh.write("query_index,best_ref,score\n")
        for q, (r, s) in enumerate(zip(best_ref, scores)):
            fh.write(f"{q},{r},{s!r}\n")


def test_eval_perfect_matches(capsys, tmp_path):
    path = tmp_path / "m.csv"
    write_match_csv(path, range(20), [1.0 - 0.01 * i for i in range(20)])
    code, stdout, err = run(capsys, "eval", "--matches", str(path))
    assert code == 0, err
    assert "# delta=12" in stdout  # ds=2 from the CSV comment
    assert "auc,1.0" in stdout

    curve_path = tmp_path / "curve.csv"
    code, stdout, _ = run(
        capsys, "eval", "--matches", str(path), "--ds", "1", "--out-curve", str(curve_path)
    )
    assert code == 0
    assert "# delta=11" in stdout
    assert load_pr_csv(curve_path).auc == 1.0

    code, stdout, _ = run(capsys, "eval", "--matches", str(path), "--delta", "0")
    assert code == 0
    assert "# delta=0" in stdout


def test_eval_ground_truth_and_errors(capsys, tmp_path):
    path = tmp_path / "m.csv"
    write_match_csv(path, [5, 6], [2.0, 1.0], ds=1)
    gt = tmp_path / "gt.csv"
    gt.write_text("0,5\n1,0\n")
    code, stdout, _ = run(
        capsys, "eval", "--matches", str(path), "--delta", "0", "--ground-truth", str(gt)
    )
    assert code == 0
    assert "auc,0.5" in stdout

    no_ds = tmp_path / "no_ds.csv"
    with open(no_ds, "w") as fh:
        fh.write("# polarity=higher\nquery_index,best_ref,score\n0,0,1.0\n")
    assert run(capsys, "eval", "--matches", str(no_ds))[0] == 2

    bad = tmp_path / "bad.csv"
    bad.write_text("# polarity=higher\nquery_index,best_ref,score\n0,0\n")
    code, _, err = run(capsys, "eval", "--matches", str(bad), "--delta", "0")
    assert code == 3
    assert ":3" in err

    assert run(capsys, "eval", "--matches", str(tmp_path / "gone.csv"))[0] == 2


def test_load_match_csv_errors(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("# polarity=higher\n0,1,2.0,9\n")
    with pytest.raises(ValueError, match="expected 3 fields"):
        load_match_csv(path)
    path.write_text("# polarity=higher\n0,one,2.0\n")
    with pytest.raises(ValueError, match="malformed row"):
        load_match_csv(path)
    path.write_text("# polarity=higher\nquery_index,best_ref,score\n")
    with pytest.raises(ValueError, match="no match rows"):
        load_match_csv(path)
    path.write_text("0,1,2.0\n")
    with pytest.raises(ValueError, match="polarity"):
        load_match_csv(path)


def test_sweep(capsys, tmp_path):
    ds = synth_dataset(capsys, tmp_path, noise="0.2")
    out = tmp_path / "sweep.csv"
    code, _, err = run(
        capsys, "sweep",
        "--ref", str(ds / "reference.spd1"), "--query", str(ds / "query.spd1"),
        "--ref-positions", str(ds / "reference_positions.txt"),
        "--query-positions", str(ds / "query_positions.txt"),
        "--methods", "seqslam,delta,deep", "--ds-values", "1,2",
        "--epochs", "3", "--hidden", "8",
        "--out", str(out),
    )
    assert code == 0, err
    cells = load_sweep_csv(out)
    assert len(cells) == 6
    assert [(c.method, c.d_s) for c in cells] == [
        ("deep", 1), ("deep", 2), ("delta", 1), ("delta", 2), ("seqslam", 1), ("seqslam", 2),
    ]
    assert all(c.auc is not None for c in cells)

    base = [
        "sweep", "--ref", str(ds / "reference.spd1"), "--query", str(ds / "query.spd1"),
        "--out", str(out),
    ]
    assert run(capsys, *base, "--methods", "deep")[0] == 2  # deep needs positions
    assert run(capsys, *base, "--ds-values", "1,x")[0] == 2
    assert run(capsys, *base, "--methods", " , ")[0] == 2
    assert run(capsys, *base, "--methods", "unknown")[0] == 2


def test_bench(capsys, tmp_path):
    ds = synth_dataset(capsys, tmp_path)
    out = tmp_path / "bench.csv"
    code, stdout, err = run(
        capsys, "bench", "--method", "seqslam", "--ds", "2", "--reps", "2",
        "--ref", str(ds / "reference.spd1"), "--query", str(ds / "query.spd1"),
        "--out", str(out),
    )
    assert code == 0, err
    method, seconds, frames = stdout.strip().split(",")
    assert method == "seqslam"
    assert float(seconds) > 0.0
    assert int(frames) == 40
    assert out.read_text().startswith("method,seconds,frames,device\n")
    assert run(
        capsys, "bench", "--method", "seqslam", "--ds", "2", "--reps", "0",
        "--ref", str(ds / "reference.spd1"), "--query", str(ds / "query.spd1"),
    )[0] == 2
