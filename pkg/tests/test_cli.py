import json
import os

import pytest

from satiredecoder.cli import main
from satiredecoder.config import load_config, strip_json_comments
from satiredecoder.errors import ConfigError

from conftest import write_config, write_dataset

GOLD = "A person stares at a phone while the dog waits by the door, mocking screen addiction."


def records(run_dir):
    return {p.name: p.read_bytes() for p in sorted((run_dir / "records").glob("*.json"))}


def test_three_sample_run(tmp_path, capsys):
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 3))
    assert main(["run", "--config", str(cfg)]) == 0
    run = tmp_path / "run"
    assert sorted(records(run)) == ["s0.json", "s1.json", "s2.json"]
    manifest = json.loads((run / "run_manifest.json").read_text())
    assert manifest["failed"] == [] and len(manifest["samples"]) == 3
    assert "3/3 samples succeeded" in capsys.readouterr().out


def test_warm_cache_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 3))
    assert main(["run", "--config", str(cfg)]) == 0
    first = records(tmp_path / "run")
    assert main(["run", "--config", str(cfg)]) == 0
    assert records(tmp_path / "run") == first
    manifest = json.loads((tmp_path / "run" / "run_manifest.json").read_text())
    assert manifest["cache"]["hit_rate"] == 1.0
    assert set(manifest["backend_calls"].values()) == {0}


def test_reasoner_failing_everywhere_gives_exit_2(tmp_path, capsys):
    backends = {"reasoner": {"type": "mock", "failures": [{"role": "reasoner", "match": "s1"}]}}
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 3), backends=backends)
    assert main(["run", "--config", str(cfg)]) == 2
    manifest = json.loads((tmp_path / "run" / "run_manifest.json").read_text())
    assert manifest["failed"] == ["s1"]
    entry = next(e for e in manifest["samples"] if e["id"] == "s1")
    assert entry["role"] == "reasoner" and "s1" in entry["error"]
    assert "FAILED s1" in capsys.readouterr().out
    assert sorted(records(tmp_path / "run")) == ["s0.json", "s2.json"]


def test_eval_perfect_answers(tmp_path, capsys):
    fixtures = tmp_path / "fx.json"
    answer = f"SUBTASK1: person, phone, dog\nSUBTASK2: a person with a phone\nSUBTASK3: {GOLD}"
    fixtures.write_text(json.dumps([{"role": "reasoner", "key": f"s{i}", "response": answer} for i in range(2)]))
    dataset = write_dataset(tmp_path / "d", 2)
    cfg = write_config(tmp_path, dataset, backends={"reasoner": {"type": "mock", "fixtures": str(fixtures)}})
    assert main(["run", "--config", str(cfg)]) == 0
    csv_path = tmp_path / "m.csv"
    assert main(["eval", "--run", str(tmp_path / "run"), "--dataset", str(dataset), "--csv", str(csv_path)]) == 0
    report = json.loads((tmp_path / "run" / "metrics.json").read_text())
    assert report["corpus"]["rouge_l"] == 1.0 and report["corpus"]["chair_i"] == 0.0
    nlg = [report["corpus"][k] for k in ("bleu", "rouge_l", "meteor", "embed_f")]
    assert report["corpus"]["ave"] == pytest.approx(sum(nlg) / 4, abs=1e-12)
    assert csv_path.read_text().startswith("sample_id,")
    assert "AVE" in capsys.readouterr().out


def test_eval_and_report_on_empty_dir(tmp_path):
    dataset = write_dataset(tmp_path / "d", 1)
    assert main(["eval", "--run", str(tmp_path), "--dataset", str(dataset)]) == 1
    assert main(["report", "--run", str(tmp_path)]) == 1


def test_report_rows(tmp_path, capsys):
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 1))
    main(["run", "--config", str(cfg)])
    capsys.readouterr()
    assert main(["report", "--run", str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out.splitlines()
    rows = [line for line in out if line.strip()[:4].replace(".", "").isdigit()]
    assert len(rows) == 5
    assert sum("<- selected" in r for r in rows) == 1


def test_report_marks_failed_trace(tmp_path, capsys):
    fixtures = tmp_path / "fx.json"
    fixtures.write_text(json.dumps([{"role": "reasoner", "key": "s0", "temperature": 0.2, "response": "garbage"}]))
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 1),
                       backends={"reasoner": {"type": "mock", "fixtures": str(fixtures)}})
    assert main(["run", "--config", str(cfg)]) == 0
    capsys.readouterr()
    main(["report", "--run", str(tmp_path / "run")])
    out = capsys.readouterr().out
    failed = [line for line in out.splitlines() if "FAILED" in line]
    assert len(failed) == 1 and failed[0].strip().startswith("0.20")
    assert "0.20" not in next(line for line in out.splitlines() if "<- selected" in line)


def test_no_uncertainty_single_trace(tmp_path):
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 2))
    assert main(["run", "--config", str(cfg), "--no-uncertainty"]) == 0
    for data in records(tmp_path / "run").values():
        traces = json.loads(data)["traces"]
        assert [t["temperature"] for t in traces] == [0.6]


def test_dry_run(tmp_path, capsys):
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 2))
    assert main(["run", "--config", str(cfg), "--dry-run"]) == 0
    assert not (tmp_path / "run" / "records").exists()
    assert "dry run: 2 samples" in capsys.readouterr().out

    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    http = {"type": "http", "base_url": f"http://127.0.0.1:{port}", "model_name": "m", "timeout": 1}
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 2), backends={"reasoner": http})
    assert main(["run", "--config", str(cfg), "--dry-run"]) == 1


def test_config_rejections(tmp_path, capsys):
    dataset = write_dataset(tmp_path / "d", 1)
    assert main(["run", "--config", str(write_config(tmp_path, dataset, colour="blue"))]) == 1
    assert "colour" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    bad_sweep = write_config(tmp_path, dataset, sweep={"temperatures": [0.4, 0.2]})
    with pytest.raises(ConfigError):
        load_config(bad_sweep)


def test_missing_dataset_is_fatal(tmp_path):
    cfg = write_config(tmp_path, tmp_path / "none.jsonl")
    assert main(["run", "--config", str(cfg)]) == 1


def test_config_comments_and_env_secret(tmp_path, monkeypatch):
    dataset = write_dataset(tmp_path / "d", 1)
    text = f"""{{
      // comment
      "dataset_path": "{dataset}", /* block */
      "output_dir": "out",
      "backends": {{"reasoner": {{"type": "http", "base_url": "http://x//y", "model_name": "m",
                                  "api_key": "${{MY_KEY}}"}}}}
    }}"""
    path = tmp_path / "c.jsonc"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)
    monkeypatch.setenv("MY_KEY", "abc")
    cfg = load_config(path)
    assert cfg.backends["reasoner"].http.api_key == "abc"
    assert cfg.output_dir == (tmp_path / "out").resolve()
    assert cfg.cache_dir == cfg.output_dir / "cache"
    assert strip_json_comments('{"a": "//not a comment"}') == '{"a": "//not a comment"}'


def test_debug_logs_are_json_lines(tmp_path, capsys):
    cfg = write_config(tmp_path, write_dataset(tmp_path / "d", 1))
    assert main(["--log-level", "debug", "run", "--config", str(cfg)]) == 0
    err = [line for line in capsys.readouterr().err.splitlines() if line.strip()]
    assert err and all(json.loads(line)["level"] for line in err)
