import json
import os

import numpy as np
import pytest

from fewshot.cli import fingerprint, main, render_table
from fewshot.evaluation import EvalReport


def run(argv):
    return main(argv)


def test_synth_is_byte_identical(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    args = ["synth", "--classes", "10", "--dim", "16", "--shift", "0", "--seed", "1"]
    assert run(args + ["--out", str(a)]) == 0
    assert run(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_evaluate_writes_report(tmp_path, capsys):
    data = tmp_path / "synth.csv"
    run(["synth", "--classes", "10", "--dim", "8", "--seed", "1", "--out", str(data)])
    out = tmp_path / "out"
    code = run(["evaluate", "--head", "proto", "--n-way", "5", "--k-shot", "1",
                "--n-query", "8", "--episodes", "10", "--seed", "7",
                "--target", str(data), "--out", str(out)])
    assert code == 0
    reports = [f for f in os.listdir(out) if f.startswith("evaluate-") and f.endswith(".json")]
    assert len(reports) == 1
    doc = json.loads((out / reports[0]).read_text())
    assert doc["n_episodes"] == 10
    assert doc["fingerprint"] in reports[0]
    confusions = [f for f in os.listdir(out) if "confusion" in f]
    assert len(confusions) == 1


def test_evaluate_reproducible_across_threads(tmp_path):
    data = tmp_path / "synth.csv"
    run(["synth", "--classes", "10", "--dim", "8", "--seed", "2", "--out", str(data)])
    outs = []
    for threads, sub in (("1", "o1"), ("4", "o2")):
        out = tmp_path / sub
        run(["evaluate", "--head", "proto", "--n-way", "5", "--k-shot", "1",
             "--episodes", "10", "--seed", "3", "--target", str(data),
             "--threads", threads, "--out", str(out)])
        name = next(f for f in os.listdir(out) if f.endswith(".json"))
        outs.append((name, (out / name).read_bytes()))
    assert outs[0] == outs[1]


def test_missing_target_is_usage_error():
    with pytest.raises(SystemExit) as e:
        run(["evaluate", "--head", "proto"])
    assert e.value.code == 2


def test_nonexistent_target_is_data_error(tmp_path):
    assert run(["evaluate", "--head", "proto", "--target", str(tmp_path / "x.csv"),
                "--episodes", "5"]) == 3


def test_config_file_with_flag_override(tmp_path, capsys):
    data = tmp_path / "synth.csv"
    run(["synth", "--classes", "8", "--dim", "4", "--seed", "5", "--out", str(data)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"target": str(data), "episodes": 10, "seed": 9}))
    out = tmp_path / "out"
    code = run(["evaluate", "--head", "proto", "--config", str(cfg),
                "--episodes", "5", "--out", str(out)])
    assert code == 0
    name = next(f for f in os.listdir(out) if f.endswith(".json"))
    doc = json.loads((out / name).read_text())
    assert doc["n_episodes"] == 5  # flag wins over config file


def test_metatrain_then_evaluate_with_checkpoint(tmp_path):
    data = tmp_path / "synth.csv"
    run(["synth", "--classes", "10", "--dim", "8", "--seed", "1", "--out", str(data)])
    out = tmp_path / "out"
    code = run(["metatrain", "--head", "proto", "--backbone", "mlp", "--hidden", "16",
                "--embed-dim", "8", "--source", str(data), "--episodes", "20",
                "--seed", "1", "--out", str(out)])
    assert code == 0
    ckpt = next(str(out / f) for f in os.listdir(out)
                if f.startswith("metatrain-") and "log" not in f)
    code = run(["evaluate", "--head", "proto", "--checkpoint", ckpt,
                "--target", str(data), "--episodes", "10", "--seed", "2",
                "--out", str(out)])
    assert code == 0


def test_pretrain_command(tmp_path):
    data = tmp_path / "synth.csv"
    run(["synth", "--classes", "5", "--per-class", "10", "--dim", "4", "--seed", "1",
         "--out", str(data)])
    out = tmp_path / "out"
    code = run(["pretrain", "--head", "baseline", "--source", str(data),
                "--epochs", "2", "--seed", "1", "--out", str(out)])
    assert code == 0
    assert any(f.startswith("pretrain-") for f in os.listdir(out))


def make_report(head, k_shot, mean, hw):
    return EvalReport(
        n_episodes=600, mean_accuracy=mean, ci95_half_width=hw,
        per_episode_accuracy=[mean] * 2, confusion=np.zeros((2, 2), dtype=int),
        precision=np.zeros(2), config={"head": head, "k_shot": k_shot},
        fingerprint=fingerprint({"head": head, "k_shot": k_shot}),
    )


def test_render_table_cells():
    reports = [
        make_report("baseline_pp", 1, 0.7303, 0.0084),
        make_report("proto", 5, 0.8490, 0.0053),
        make_report("subspace", 1, 0.4077, 0.0089),
    ]
    text, csv_text = render_table(reports)
    assert "73.03% ± 0.84%" in text
    assert "84.90% ± 0.53%" in text
    assert "40.77% ± 0.89%" in csv_text
    assert csv_text.splitlines()[0] == "Method,1-shot,5-shot"


def test_report_command(tmp_path, capsys):
    data = tmp_path / "synth.csv"
    run(["synth", "--classes", "8", "--dim", "4", "--seed", "1", "--out", str(data)])
    out = tmp_path / "out"
    run(["evaluate", "--head", "proto", "--target", str(data), "--episodes", "5",
         "--seed", "1", "--out", str(out)])
    report_json = next(str(out / f) for f in os.listdir(out) if f.endswith(".json"))
    capsys.readouterr()
    assert run(["report", report_json, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "proto" in text and "%" in text
    assert any(f.startswith("report-") and f.endswith(".csv") for f in os.listdir(out))


def test_fingerprint_is_stable():
    cfg = {"head": "proto", "k_shot": 1, "seed": 7}
    assert fingerprint(cfg) == fingerprint(dict(reversed(list(cfg.items()))))
    assert fingerprint(cfg) != fingerprint({**cfg, "seed": 8})
