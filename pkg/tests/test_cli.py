import json
from pathlib import Path

import numpy as np

from lmlds.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, main
from lmlds.data_io import TensorSeries, load_series, save_series
from lmlds.model import (
    ModelFamily,
    fit_baseline_lds,
    param_count,
)

SMOKE = Path(__file__).resolve().parents[1] / "data" / "smoke"
SMOKE_ARGS = ["--manifest", str(SMOKE / "manifest.json"), "--data", str(SMOKE / "series.csv")]


def run(*argv):
    return main([str(a) for a in argv])


def test_train_smoke_dataset(tmp_path):
    out = tmp_path / "model.json"
    code = run("train", *SMOKE_ARGS, "--latent-dim", 2, "--train-len", 50, "--max-iters", 15, "--out", out)
    assert code == 0
    log = json.loads((tmp_path / "model.train.json").read_text())
    assert log["monotone"]
    assert len(log["traces"]) == 4
    for trace in log["traces"]:
        assert np.all(np.diff(trace) >= -1e-8)
    assert log["param_count"] == param_count(ModelFamily.L_MLDS, 3, 2, 4)


def test_train_len_exceeds_series(tmp_path, capsys):
    out = tmp_path / "model.json"
    code = run("train", *SMOKE_ARGS, "--latent-dim", 2, "--train-len", 400, "--out", out)
    assert code == EXIT_CONFIG
    assert "error[config]" in capsys.readouterr().err
    assert not out.exists()


def test_config_errors_are_aggregated(capsys):
    code = run("train", "--mode", "sparse", "--latent-dim", 0)
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.count("error[config]") == 1
    for frag in ("--data", "--manifest", "--mode", "--latent-dim", "--train-len", "--out"):
        assert frag in err


def test_train_twice_byte_identical(tmp_path):
    for name in ("a.json", "b.json"):
        assert run("train", *SMOKE_ARGS, "--latent-dim", 2, "--train-len", 50, "--max-iters", 8,
                   "--seed", 4, "--out", tmp_path / name) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    logs = [json.loads((tmp_path / f"{s}.train.json").read_text()) for s in "ab"]
    for log in logs:
        del log["config"]["out"]
    assert logs[0] == logs[1]


def test_overwrite_guard(tmp_path):
    out = tmp_path / "model.json"
    args = ["train", *SMOKE_ARGS, "--latent-dim", 1, "--train-len", 50, "--max-iters", 2, "--out", out]
    assert run(*args) == 0
    assert run(*args) == EXIT_CONFIG
    assert run(*args, "--overwrite") == 0


def test_predict_horizon_one(tmp_path):
    model = tmp_path / "model.json"
    preds = tmp_path / "pred.csv"
    assert run("train", *SMOKE_ARGS, "--latent-dim", 2, "--train-len", 50, "--max-iters", 5, "--out", model) == 0
    assert run("predict", *SMOKE_ARGS, "--model", model, "--horizon", 1, "--out", preds) == 0
    lines = preds.read_text().splitlines()
    assert len(lines) == 3 * 4
    epochs = {int(line.split(",")[0]) for line in lines}
    assert epochs == {51}
    cells = {tuple(int(v) for v in line.split(",")[1:3]) for line in lines}
    assert cells == {(i, k) for i in range(1, 4) for k in range(1, 5)}


def test_predict_k1_matches_baseline(tmp_path, rng):
    obs = rng.standard_normal((40, 3, 1))
    save_series(TensorSeries(obs, "k1"), tmp_path / "m.json", tmp_path / "d.csv")
    data = ["--manifest", tmp_path / "m.json", "--data", tmp_path / "d.csv"]
    model = tmp_path / "model.json"
    assert run("train", *data, "--transform", "identity", "--latent-dim", 2, "--train-len", 30,
               "--max-iters", 10, "--seed", 9, "--out", model) == 0
    assert run("predict", *data, "--model", model, "--horizon", 3, "--out", tmp_path / "p.csv") == 0
    got = load_series_from_long(tmp_path / "p.csv", 3, 3, 1, first=31)
    base, _ = fit_baseline_lds(obs[:30], 2, "full", 9, 10, 1e-6)
    np.testing.assert_allclose(got, base.predict(3), rtol=0, atol=1e-12)


def load_series_from_long(path, n, rows, tubes, first):
    out = np.full((n, rows, tubes), np.nan)
    for line in Path(path).read_text().splitlines():
        e, i, k, v = line.split(",")
        out[int(e) - first, int(i) - 1, int(k) - 1] = float(v)
    assert not np.isnan(out).any()
    return out


def test_predict_dimension_mismatch(tmp_path, rng):
    model = tmp_path / "model.json"
    assert run("train", *SMOKE_ARGS, "--latent-dim", 1, "--train-len", 50, "--max-iters", 2, "--out", model) == 0
    save_series(TensorSeries(rng.standard_normal((60, 2, 4))), tmp_path / "m.json", tmp_path / "d.csv")
    code = run("predict", "--manifest", tmp_path / "m.json", "--data", tmp_path / "d.csv",
               "--model", model, "--horizon", 1, "--out", tmp_path / "p.csv")
    assert code == EXIT_DATA


def test_evaluate_report_shape(tmp_path):
    out = tmp_path / "report"
    code = run("evaluate", *SMOKE_ARGS, "--latent-dim", 2, "--train-len", 50, "--test-len", 10,
               "--variants", "dft,dct,dwt,lds", "--max-iters", 5, "--out", out)
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    variants = report["variants"]
    assert set(variants) == {"dft", "dct", "dwt", "lds"}
    n_errors = sum(len(v["errors"]) for v in variants.values())
    assert n_errors == 4 * 10
    csv_rows = (tmp_path / "report.csv").read_text().splitlines()
    assert len(csv_rows) == 1 + 4 * 10
    for name in ("dft", "dct", "dwt"):
        assert variants[name]["param_count"] == param_count(ModelFamily.L_MLDS, 3, 2, 4)
        assert variants[name]["train_seconds"] >= 0
    d = variants["lds"]["latent_dim"]
    assert variants["lds"]["param_count"] == param_count(ModelFamily.LDS, 12, d, 1)
    assert variants["lds"]["param_count"] >= report["param_budget"]
    assert report["test_epochs"] == list(range(51, 61))
    assert report["config"]["seed"] == 0


def test_evaluate_records_failed_variant(tmp_path, rng):
    save_series(TensorSeries(rng.standard_normal((30, 3, 6))), tmp_path / "m.json", tmp_path / "d.csv")
    data = ["--manifest", tmp_path / "m.json", "--data", tmp_path / "d.csv"]
    code = run("evaluate", *data, "--latent-dim", 1, "--train-len", 25, "--variants", "dft,dwt",
               "--max-iters", 3, "--out", tmp_path / "r")
    assert code == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["variants"]["dwt"]["status"] == "failed"
    assert report["variants"]["dft"]["status"] == "ok"
    code = run("evaluate", *data, "--latent-dim", 1, "--train-len", 25, "--variants", "dwt",
               "--max-iters", 3, "--out", tmp_path / "r2")
    assert code == EXIT_NUMERIC


def test_benchmark_echoes_config(tmp_path):
    out = tmp_path / "bench"
    code = run("benchmark", "--sizes", "2x2,3x4", "--length", 30, "--max-iters", 3, "--seed", 5,
               "--workers", 2, "--variants", "dft,lds", "--out", out)
    assert code == 0
    report = json.loads((tmp_path / "bench.json").read_text())
    assert report["seed"] == 5
    assert report["config"]["sizes"] == "2x2,3x4"
    assert report["config"]["max_iters"] == 3
    assert len(report["sizes"]) == 2
    for size in report["sizes"]:
        for v in size["variants"].values():
            assert v["status"] == "ok"
            assert all(val > 0 for key, val in v.items() if key.startswith("seconds_"))
    assert "seconds_2_workers" in report["sizes"][0]["variants"]["dft"]


def test_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "m.json").write_text(json.dumps({"rows": 1, "tubes": 1, "length": 2}))
    (tmp_path / "d.csv").write_text("1,1,1,3.0\n1,1,1,4.0\n")
    code = run("train", "--manifest", tmp_path / "m.json", "--data", tmp_path / "d.csv",
               "--latent-dim", 1, "--train-len", 2, "--out", tmp_path / "x.json")
    assert code == EXIT_DATA
    assert "d.csv:2" in capsys.readouterr().err
    code = run("train", "--manifest", tmp_path / "nope.json", "--data", tmp_path / "d.csv",
               "--latent-dim", 1, "--train-len", 2, "--out", tmp_path / "x.json")
    assert code == EXIT_DATA


def test_config_file_and_flag_precedence(tmp_path):
    cfg = {
        "manifest": str(SMOKE / "manifest.json"),
        "data": str(SMOKE / "series.csv"),
        "latent-dim": 1,
        "train_len": 50,
        "max_iters": 2,
        "seed": 1,
    }
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert run("train", "--config", tmp_path / "c.json", "--seed", 3, "--out", tmp_path / "m.json") == 0
    log = json.loads((tmp_path / "m.train.json").read_text())
    assert log["config"]["seed"] == 3
    assert log["config"]["latent_dim"] == 1
    (tmp_path / "bad.json").write_text(json.dumps({"lattent_dim": 1}))
    assert run("train", "--config", tmp_path / "bad.json", "--out", tmp_path / "z.json") == EXIT_CONFIG


def test_gen_synthetic_roundtrip(tmp_path):
    args = ["gen-synthetic", "--rows", 2, "--tubes", 4, "--latent-dim", 1, "--length", 12,
            "--manifest", tmp_path / "m.json", "--data", tmp_path / "d.csv", "--seed", 3]
    assert run(*args) == 0
    s = load_series(tmp_path / "m.json", tmp_path / "d.csv")
    assert s.observations.shape == (12, 2, 4)
    assert run(*args) == EXIT_CONFIG
    assert run(*args[:-4], "--transform", "dwt", "--tubes", 6) == EXIT_CONFIG
