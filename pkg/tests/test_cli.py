import csv
import json

import numpy as np
import pytest

from basketlda.cli import main
from basketlda.corpus import BasketCorpus
from basketlda.generator import GroundTruth
from basketlda.inference import TopicModel
from basketlda.metrics import match_topics


@pytest.fixture
def tx_csv(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["basket_id,date,customer_id,product_id,quantity"]
    for d in range(40):
        for p in rng.choice(["milk", "bread", "eggs", "tea"], size=3, replace=False):
            lines.append(f"b{d:02d},2014-{1 + d % 12:02d}-03,c{d % 7},{p},{int(rng.integers(5000, 9000))}")
        lines.append(f"b{d:02d},2014-{1 + d % 12:02d}-03,c{d % 7},rare,1")
    path = tmp_path / "tx.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def sim(tmp_path):
    out = tmp_path / "sim.bin"
    assert main(["simulate", "--k", "3", "--v", "40", "--d", "300", "--beta", "0.3", "--seed", "5", "--out", str(out)]) == 0
    return out


def test_ingest(tx_csv, tmp_path, capsys):
    out = tmp_path / "c.bin"
    rc = main(["ingest", "--input", str(tx_csv), "--min-units", "50000", "--min-basket", "20",
               "--out", str(out)])
    assert rc == 0
    assert "D=40 V=4" in capsys.readouterr().out
    corpus = BasketCorpus.load(out)
    assert "rare" not in corpus.vocab
    cfg = json.loads((tmp_path / "c.bin.config.json").read_text())
    assert cfg["min_units"] == 50000 and cfg["command"] == "ingest"


def test_holdout_split_reproducible(tx_csv, tmp_path, capsys):
    hashes = []
    for name in ("a.bin", "b.bin"):
        rc = main(["ingest", "--input", str(tx_csv), "--min-units", "0", "--min-basket", "1",
                   "--holdout", "0.1", "--seed", "7", "--out", str(tmp_path / name)])
        assert rc == 0
        hashes.append([line.split("sha256=")[1] for line in capsys.readouterr().out.splitlines()
                       if "sha256=" in line])
    assert hashes[0] == hashes[1] and len(hashes[0]) == 3
    assert BasketCorpus.load(tmp_path / "a.test.bin").D == 4


def test_missing_input(tmp_path, capsys):
    rc = main(["ingest", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "c.bin")])
    assert rc == 2
    assert "nope.csv" in capsys.readouterr().err


def test_wrong_file_kind(sim, tmp_path, capsys):
    rc = main(["train", "--corpus", str(tmp_path / "sim.truth.bin"), "--k", "2", "--out", str(tmp_path / "m.bin")])
    assert rc == 2
    assert "format version mismatch" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["train"], ["train", "--k", "x"], ["frobnicate"]])
def test_usage_errors(argv):
    assert main(argv) == 1


def test_config_file(sim, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 2, "max_epochs": 3}))
    out = tmp_path / "m.bin"
    assert main(["--config", str(cfg), "train", "--corpus", str(sim), "--out", str(out)]) == 0
    model = TopicModel.load(out)
    assert model.K == 2 and model.trace.size <= 3
    cfg.write_text(json.dumps({"k": 2, "colour": "red"}))
    assert main(["--config", str(cfg), "train", "--corpus", str(sim), "--out", str(out)]) == 1
    assert "colour" in capsys.readouterr().err


def test_data_dir(sim, tmp_path, monkeypatch):
    monkeypatch.setenv("BASKETLDA_DATA_DIR", str(tmp_path))
    assert main(["train", "--corpus", "sim.bin", "--k", "2", "--max-epochs", "2", "--out", "m.bin"]) == 0
    assert (tmp_path / "m.bin").exists()


def test_eval_sweep(sim, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["eval", "--corpus", str(sim), "--k", "1,3,6", "--seed", "1", "--max-epochs", "60",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["K"] for r in rows] == ["1", "3", "6"]
    flagged = [r for r in rows if r["selected"] == "1"]
    assert len(flagged) == 1
    assert float(flagged[0]["test_log_perplexity"]) == min(float(r["test_log_perplexity"]) for r in rows)


def test_simulate_train_align(tmp_path, capsys):
    data, model = tmp_path / "s.bin", tmp_path / "m.bin"
    assert main(["simulate", "--k", "5", "--v", "200", "--d", "3000", "--seed", "42", "--out", str(data)]) == 0
    assert main(["train", "--corpus", str(data), "--k", "5", "--out", str(model)]) == 0
    capsys.readouterr()
    assert main(["align", "--truth", str(tmp_path / "s.truth.bin"), "--model", str(model)]) == 0
    tv = float(capsys.readouterr().out.split("mean_tv=")[1].split()[0])
    assert tv < 0.10
    assert tv == pytest.approx(match_topics(GroundTruth.load(tmp_path / "s.truth.bin").phi,
                                            TopicModel.load(model).phi)[1], abs=1e-6)


def test_model_commands(sim, tmp_path, capsys):
    model = tmp_path / "m.bin"
    assert main(["train", "--corpus", str(sim), "--k", "3", "--out", str(model)]) == 0
    capsys.readouterr()
    assert main(["rank", "--model", str(model), "--topic", "2", "--lambda", "0.6", "--top", "10",
                 "--out", str(tmp_path / "r.csv")]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 11
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 11
    assert main(["topics", "--model", str(model), "--out", str(tmp_path / "t.csv")]) == 0
    assert "%" in capsys.readouterr().out
    assert main(["rank", "--model", str(model), "--topic", "9"]) == 2

    tasks = tmp_path / "tasks.json"
    assert main(["survey", "generate", "--model", str(model), "--type", "intruder", "--out", str(tasks)]) == 0
    ids = [t["task_id"] for t in json.loads(tasks.read_text())]
    (tmp_path / "resp.csv").write_text("task_id,respondent_id,chosen_index\n"
                                       + "".join(f"{t},r1,0\n" for t in ids))
    assert main(["survey", "score", "--tasks", str(tasks), "--responses", str(tmp_path / "resp.csv"),
                 "--out", str(tmp_path / "score.csv")]) == 0
    assert "chance 16.67%" in capsys.readouterr().out


def test_seasonal_and_predict(tmp_path, capsys):
    data, model = tmp_path / "s.bin", tmp_path / "m.bin"
    groups = json.dumps({"f": [3.0, 0.1, 0.1], "m": [0.1, 0.1, 3.0]})
    seasonal = json.dumps({"1": [1, 1, 1, 1, 1, 3, 3, 1, 1, 1, 1, 1]})
    assert main(["simulate", "--k", "3", "--v", "60", "--d", "600", "--seed", "3", "--groups", groups,
                 "--seasonal", seasonal, "--baskets-per-customer", "3", "--out", str(data)]) == 0
    assert (tmp_path / "s.groups.csv").exists()
    assert main(["train", "--corpus", str(data), "--k", "3", "--out", str(model)]) == 0
    assert main(["seasonal", "--model", str(model), "--corpus", str(data), "--out", str(tmp_path / "p.csv")]) == 0
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 1 + 3 * 12
    capsys.readouterr()
    assert main(["predict", "--model", str(model), "--corpus", str(data), "--labels",
                 str(tmp_path / "s.groups.csv"), "--task", "gender", "--out", str(tmp_path / "r.json"),
                 "--predictions", str(tmp_path / "pred.csv")]) == 0
    out = capsys.readouterr().out
    assert "auc=" in out and "baseline=" in out
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["mean"]["accuracy"] > report["baseline"]["mean"] + 0.1
    assert len((tmp_path / "pred.csv").read_text().splitlines()) == 201
