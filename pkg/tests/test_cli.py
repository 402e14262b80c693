import csv
import json

import numpy as np
import pytest

from danmmd.cli import main, parse_variant
from danmmd.data import read_csv, write_csv
from danmmd.network import load_checkpoint
from danmmd.trainer import Variant


@pytest.fixture
def moons(tmp_path):
    src, tgt = tmp_path / "src.csv", tmp_path / "tgt.csv"
    assert main(["gen", "--kind", "moons", "--n", "120", "--rotation", "30", "--seed", "1",
                 "--out", str(src), str(tgt)]) == 0
    return src, tgt


def _train(tmp_path, moons, name, *extra):
    src, tgt = moons
    out = tmp_path / name
    code = main(["train", "--source", str(src), "--target", str(tgt), "--epochs", "3",
                 "--batch-size", "16", "--hidden", "8,8", "--out", str(out), *extra])
    return code, out


def _history(out):
    with open(out / "history.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_moons(tmp_path):
    a = [tmp_path / "a_s.csv", tmp_path / "a_t.csv"]
    b = [tmp_path / "b_s.csv", tmp_path / "b_t.csv"]
    for out in (a, b):
        assert main(["gen", "--kind", "moons", "--n", "500", "--rotation", "30", "--seed", "1",
                     "--out", *map(str, out)]) == 0
    assert len(read_csv(a[0])) == len(read_csv(a[1])) == 500
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].read_bytes() == b[1].read_bytes()


def test_gen_gaussians(tmp_path):
    s, t = tmp_path / "s.csv", tmp_path / "t.csv"
    assert main(["gen", "--kind", "gaussians", "--n", "90", "--means", "0,0;3,0;0,3",
                 "--shift", "1,1", "--out", str(s), str(t)]) == 0
    assert np.bincount(read_csv(s).labels).tolist() == [30, 30, 30]


def test_gen_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["gen", "--kind", "moons", "--n", "10"])
    assert info.value.code == 2


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DANMMD_SEED", "7")
    env = [tmp_path / "e_s.csv", tmp_path / "e_t.csv"]
    flag = [tmp_path / "f_s.csv", tmp_path / "f_t.csv"]
    main(["gen", "--kind", "moons", "--n", "20", "--out", *map(str, env)])
    main(["gen", "--kind", "moons", "--n", "20", "--seed", "7", "--out", *map(str, flag)])
    assert env[0].read_bytes() == flag[0].read_bytes()


def test_parse_variant():
    assert parse_variant("source-only") == (Variant.SOURCE_ONLY, None)
    assert parse_variant("dan-sk") == (Variant.DAN_SINGLE_KERNEL, None)
    assert parse_variant("dan-layer=2") == (Variant.DAN_SINGLE_LAYER, 2)
    with pytest.raises(Exception):
        parse_variant("dan-layer=x")


def test_mmd_test_median(moons, capsys):
    src, tgt = moons
    assert main(["mmd-test", "--source", str(src), "--target", str(tgt),
                 "--permutations", "200", "--seed", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["bandwidths"]) == 1
    assert {"statistic", "p_value", "reject", "beta"} <= set(out)


def test_mmd_test_grid_select_beta(tmp_path, capsys):
    src, tgt = tmp_path / "s.csv", tmp_path / "t.csv"
    main(["gen", "--kind", "gaussians", "--n", "400", "--means", "0,0;0,0", "--shift", "1.5,0",
          "--out", str(src), str(tgt)])
    assert main(["mmd-test", "--source", str(src), "--target", str(tgt), "--kernels", "grid",
                 "--select-beta", "--permutations", "100"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["bandwidths"]) == 33
    assert out["d_dot_beta_raw"] == pytest.approx(1.0, abs=1e-8)


def test_train_outputs(tmp_path, moons, capsys):
    code, out = _train(tmp_path, moons, "run")
    assert code == 0
    for name in ("manifest.json", "history.csv", "checkpoint.bin", "summary.json",
                 "features_source_layer1.csv", "features_target_layer2.csv"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["epochs_completed"] == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["variant"] == "dan"
    net = load_checkpoint(out / "checkpoint.bin")
    assert [s.output_width for s in net.specs] == [8, 8, 2]
    assert len(_history(out)) == 3


def test_train_lambda_zero_equals_source_only(tmp_path, moons):
    _, a = _train(tmp_path, moons, "dan0", "--variant", "dan", "--lambda", "0")
    _, b = _train(tmp_path, moons, "src", "--variant", "source-only")
    assert (a / "summary.json").read_text() == (b / "summary.json").read_text()
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()


def test_train_single_kernel_constant_hash(tmp_path, moons):
    code, out = _train(tmp_path, moons, "sk", "--variant", "dan-sk", "--beta-period", "2")
    assert code == 0
    assert len({row["beta_hash"] for row in _history(out)}) == 1


def test_train_single_layer(tmp_path, moons):
    code, out = _train(tmp_path, moons, "l1", "--variant", "dan-layer=1")
    assert code == 0
    assert "mmd2_layer1" in _history(out)[0] and "mmd2_layer2" not in _history(out)[0]


def test_train_is_byte_reproducible(tmp_path, moons):
    _, a = _train(tmp_path, moons, "r1", "--seed", "5")
    _, b = _train(tmp_path, moons, "r2", "--seed", "5")
    for name in ("history.csv", "checkpoint.bin", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_train_missing_file_exit_code(tmp_path, moons, capsys):
    src, _ = moons
    code = main(["train", "--source", str(src), "--target", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "x")])
    assert code == 4


def test_train_bad_layer_exit_code(tmp_path, moons, capsys):
    code, _ = _train(tmp_path, moons, "bad", "--layers", "7")
    assert code == 2


def test_train_divergence_exit_code(tmp_path, moons, capsys):
    # inputs near the float64 limit overflow after the first update
    scaled = []
    for path in moons:
        ds = read_csv(path)
        ds.features *= 1e150
        write_csv(ds, path.with_name("big_" + path.name))
        scaled.append(path.with_name("big_" + path.name))
    code, out = _train(tmp_path, scaled, "div")
    assert code == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"].startswith("diverged")


def test_sweep_lambda(tmp_path, moons, capsys):
    src, tgt = moons
    out = tmp_path / "sweep.csv"
    code = main(["sweep-lambda", "--source", str(src), "--target", str(tgt), "--epochs", "1",
                 "--batch-size", "16", "--hidden", "8,8", "--seeds", "0", "--out", str(out)])
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["lambda"]) for r in rows] == [0.1, 0.4, 0.7, 1.0, 1.4, 1.7, 2.0]
    assert set(rows[0]) == {"lambda", "mean_target_acc", "std_target_acc",
                            "mean_selection_score", "n_runs", "n_failed"}
    report = json.loads(capsys.readouterr().out)
    assert report["best_lambda_by_score"] in [0.1, 0.4, 0.7, 1.0, 1.4, 1.7, 2.0]


def test_adist(tmp_path, moons, capsys):
    _, out = _train(tmp_path, moons, "ad")
    capsys.readouterr()
    code = main(["adist", "--features-a", str(out / "features_source_layer1.csv"),
                 "--features-b", str(out / "features_target_layer1.csv"), "--seeds", "3"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["values"]) == 3
    assert 0.0 <= report["mean"] <= 2.0


def test_adist_width_mismatch(tmp_path, moons, capsys):
    _, out = _train(tmp_path, moons, "ad2")
    code = main(["adist", "--features-a", str(out / "features_source_layer1.csv"),
                 "--features-b", str(out / "features_target_layer2.csv")])
    assert code == 2
