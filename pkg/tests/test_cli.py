import csv
import json

import numpy as np
import pytest

from qmem import count_params, ModelConfig
from qmem.cli import main
from qmem.model import ABLATION_ROWS

GEN = ["--shots", "3", "--samples", "40", "--in-dim", "6", "--out-dim", "4", "--latent-dim", "2", "--seed", "7"]
FAST = ["--epochs", "2", "--feat-dim", "8", "--n-history", "2", "--n-global-tokens", "2", "--seed", "1"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    assert main(["gen", "--out", str(out), *GEN]) == 0
    return out


def files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_gen_layout(corpus):
    names = set(files(corpus))
    assert {"manifest.json", "split.json", "resolved_config.json"} <= names
    assert sorted(n for n in names if n.endswith(".csv")) == ["shot_000.csv", "shot_001.csv", "shot_002.csv"]
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert (manifest["in_dim"], manifest["out_dim"]) == (6, 4)


def test_gen_rerun_byte_identical(corpus, tmp_path):
    again = tmp_path / "again"
    assert main(["gen", "--out", str(again), *GEN]) == 0
    a, b = files(corpus), files(again)
    a.pop("resolved_config.json"), b.pop("resolved_config.json")
    assert a == b


def test_gen_refuses_non_empty_out(corpus, capsys):
    assert main(["gen", "--out", str(corpus), *GEN]) == 2
    assert "--force" in capsys.readouterr().err


def test_gen_missing_out_is_usage_error(capsys):
    assert main(["gen", *GEN]) == 2
    assert "usage:" in capsys.readouterr().err


def test_eval_missing_required_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["eval", "--corpus", "x"])
    assert e.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_gen_invalid_spec(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "c"), "--rho", "1.5"]) == 2


def test_gen_from_resolved_config(corpus, tmp_path):
    out = tmp_path / "re"
    cfg = json.loads((corpus / "resolved_config.json").read_text())
    cfg["out"] = str(out)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["gen", "--config", str(path)]) == 0
    assert (out / "shot_001.csv").read_bytes() == (corpus / "shot_001.csv").read_bytes()


@pytest.fixture(scope="module")
def run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["train", "--corpus", str(corpus), "--out", str(out), "--quiet", *FAST]) == 0
    return out


def test_train_outputs(run):
    report = json.loads((run / "report.json").read_text())
    assert len(report["records"]) == 2
    assert len((run / "metrics.jsonl").read_text().splitlines()) == 2
    assert (run / "checkpoint" / "params.bin").exists()
    resolved = json.loads((run / "resolved_config.json").read_text())
    assert resolved["train"]["lr"] == 0.001 and resolved["train"]["batch_size"] == 16
    assert resolved["data"]["gap_ms"] == 30.0 and resolved["model"]["in_dim"] == 6


def test_train_same_seed_identical_report(corpus, run, tmp_path):
    out = tmp_path / "r2"
    assert main(["train", "--corpus", str(corpus), "--out", str(out), "--quiet", *FAST]) == 0
    assert (out / "report.json").read_bytes() == (run / "report.json").read_bytes()


def test_train_reproducible_from_resolved_config(run, tmp_path):
    cfg = json.loads((run / "resolved_config.json").read_text())
    cfg["out"] = str(tmp_path / "r3")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--quiet"]) == 0
    assert (tmp_path / "r3" / "report.json").read_bytes() == (run / "report.json").read_bytes()


def test_train_echoes_metrics(corpus, tmp_path, capsys):
    assert main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "e"), *FAST]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [json.loads(s)["epoch"] for s in lines[:2]] == [1, 2]


def test_train_ablation_flag(corpus, tmp_path):
    assert main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "m"), "--ablation", "mlp",
                 "--quiet", *FAST]) == 0
    resolved = json.loads((tmp_path / "m" / "resolved_config.json").read_text())
    assert resolved["model"]["ablation"] == {"use_hopfield": False, "use_posenc": False, "use_lparam": False}


def test_train_in_dim_mismatch(corpus, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"in_dim": 9}}))
    code = main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "x"), "--config", str(cfg), *FAST])
    assert code == 3
    err = capsys.readouterr().err
    assert "9" in err and "6" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(corpus, tmp_path):
    assert main(["train", "--corpus", str(corpus), "--out", str(tmp_path / "d"), "--quiet", "--lr", "1e6",
                 *FAST]) == 4


def test_train_missing_corpus(tmp_path):
    assert main(["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o"), *FAST]) == 2


def test_eval_matches_recorded_test_mse(run, corpus, tmp_path, capsys):
    report = json.loads((run / "report.json").read_text())
    assert main(["eval", "--checkpoint", str(run), "--corpus", str(corpus), "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "eval.json").read_text())
    assert res["mse"] == pytest.approx(report["summary"]["best_test_mse"], rel=1e-10)
    assert main(["eval", "--checkpoint", str(run), "--corpus", str(corpus), "--batch-size", "1"]) == 0
    one = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert abs(one["mse"] - res["mse"]) <= 1e-10


def test_eval_dim_mismatch(run, tmp_path):
    other = tmp_path / "other"
    assert main(["gen", "--out", str(other), "--shots", "2", "--samples", "30", "--in-dim", "5", "--out-dim", "4"]) == 0
    assert main(["eval", "--checkpoint", str(run), "--corpus", str(other)]) == 3


@pytest.fixture(scope="module")
def ablation(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "abl"
    assert main(["ablate", "--corpus", str(corpus), "--out", str(out), *FAST]) == 0
    return out


def test_ablate_table(ablation):
    with open(ablation / "table.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["name"] for r in rows] == list(ABLATION_ROWS)
    flags = [(r["mlp"], r["hopfield"], r["position"], r["lparam"]) for r in rows]
    assert flags == [("1", "0", "0", "0"), ("1", "1", "0", "0"), ("1", "1", "1", "0"), ("1", "0", "0", "1"),
                     ("1", "1", "1", "1")]
    assert json.loads((ablation / "table.json").read_text())[0]["row"] == 1
    for r in rows:
        cfg = ModelConfig(in_dim=6, out_dim=4, feat_dim=8, n_history=2, n_global_tokens=2,
                          ablation=ABLATION_ROWS[r["name"]])
        assert int(r["param_count"]) == count_params(cfg)
        assert np.isfinite(float(r["best_test_mse"]))


def test_ablate_rerun_identical(ablation, corpus, tmp_path):
    out = tmp_path / "abl2"
    assert main(["ablate", "--corpus", str(corpus), "--out", str(out), *FAST, "--jobs", "2"]) == 0
    assert (out / "table.csv").read_bytes() == (ablation / "table.csv").read_bytes()


def test_sweep_single_value_equals_train(corpus, run, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--corpus", str(corpus), "--out", str(out), "--axis", "hidden", "--values", "8", *FAST]) == 0
    with open(out / "table.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["value"] == "8"
    report = json.loads((run / "report.json").read_text())
    assert float(rows[0]["best_test_mse"]) == report["summary"]["best_test_mse"]
    assert (out / "hidden_8" / "report.json").read_bytes() == (run / "report.json").read_bytes()


def test_sweep_heads(corpus, tmp_path):
    out = tmp_path / "sh"
    assert main(["sweep", "--corpus", str(corpus), "--out", str(out), "--axis", "heads", "--values", "1,2,4",
                 *FAST]) == 0
    rows = json.loads((out / "table.json").read_text())
    assert [r["value"] for r in rows] == [1, 2, 4]
    assert len({r["param_count"] for r in rows}) == 1


@pytest.mark.parametrize("extra", [["--axis", "hidden", "--values", ""], ["--values", "8"],
                                   ["--axis", "heads", "--values", "a,b"]])
def test_sweep_usage_errors(corpus, tmp_path, extra):
    assert main(["sweep", "--corpus", str(corpus), "--out", str(tmp_path / "s"), *extra, *FAST]) == 2
