from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from cfrefine.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, EXIT_SERVICE, main

from test_harness import mock_config, write_lines


def run_dir_from(capsys) -> Path:
    out = capsys.readouterr().out.strip().splitlines()
    return Path(out[-1])


def test_run_report_cda_score(tmp_path, capsys):
    cfg = mock_config(tmp_path)
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    run_dir = run_dir_from(capsys)
    assert run_dir.parent == tmp_path / "out"
    assert main(["report", str(run_dir)]) == EXIT_OK
    assert "## summary" in capsys.readouterr().out
    assert main(["cda", str(run_dir), "--out", str(tmp_path / "cda.jsonl")]) == EXIT_OK
    capsys.readouterr()
    assert len((tmp_path / "cda.jsonl").read_text().splitlines()) == 12
    assert main(["score", "--pred", str(tmp_path / "cda.jsonl"), "--gold", str(tmp_path / "cda.jsonl")]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "100.00"


def test_seed_and_sample_are_recorded(tmp_path, capsys):
    cfg = mock_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--seed", "11", "--sample", "3"]) == EXIT_OK
    manifest = json.loads((run_dir_from(capsys) / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 11 and manifest["loop"]["seed"] == 11
    assert len(manifest["instance_ids"]) == 3


def test_judge_and_faithfulness(tmp_path, capsys):
    cfg = mock_config(tmp_path)
    main(["run", "--config", str(cfg)])
    run_dir = run_dir_from(capsys)
    assert main(["judge", "--config", str(cfg), str(run_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "5.00 ± 0.00" in out and (run_dir / "judge" / "ratings.jsonl").exists()
    assert main(["faithfulness", "--config", str(cfg), "--methods", "loo", "kernel_shap", "--out", str(tmp_path / "f")]) == EXIT_OK
    assert "kernel_shap" in capsys.readouterr().out
    assert (tmp_path / "f" / "faithfulness.csv").exists()


def test_ablate(tmp_path, capsys):
    cfg = mock_config(tmp_path)
    assert main(["ablate", "--config", str(cfg), "--feedback", "none", "top", "--methods", "loo"]) == EXIT_OK
    root = run_dir_from(capsys)
    rows = json.loads((root / "ablation.json").read_text())
    assert [r["arm"] for r in rows] == ["none-es", "attribution-top-loo-es", "none-noes", "attribution-top-loo-noes"]
    assert (root / "ablation.csv").read_text().startswith("arm,feedback,early_stop,lfr")


def test_config_errors_exit_1(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    assert main(["run"]) == EXIT_CONFIG
    gold = write_lines(tmp_path / "g.jsonl", [{"id": "1", "label": "a"}])
    pred = write_lines(tmp_path / "p.jsonl", [{"id": "2", "label": "a"}])
    assert main(["score", "--pred", str(pred), "--gold", str(gold)]) == EXIT_CONFIG


def test_all_instances_failing_on_service_errors_exit_3(tmp_path):
    # a base template longer than the generator's prompt limit aborts every instance
    raw = json.loads(mock_config(tmp_path).read_text())
    raw["services"]["max_prompt_chars"] = 10_000
    raw["templates"] = {"base": "long.txt"}
    (tmp_path / "long.txt").write_text("[INPUT_TEXT]" + "x" * 20_000 + "\n")
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(json.dumps(raw))
    assert main(["run", "--config", str(cfg)]) == EXIT_SERVICE
    raw["abort_threshold"] = 1.0
    cfg.write_text(json.dumps(raw))
    assert main(["run", "--config", str(cfg)]) == EXIT_OK


def test_partial_failure_mixed_exit_2(tmp_path, monkeypatch):
    from cfrefine.harness import runner

    def boom(*a, **k):
        raise runner.PartialFailure("3/4 instances aborted", tmp_path, all_service_failures=False)

    monkeypatch.setattr(runner, "run_batch", boom)
    assert main(["run", "--config", str(mock_config(tmp_path))]) == EXIT_PARTIAL


def test_service_failure_exit_3(tmp_path, monkeypatch):
    monkeypatch.setenv("CFREFINE_GENERATOR_URL", "http://127.0.0.1:9")
    monkeypatch.setenv("CFREFINE_CLASSIFIER_URL", "http://127.0.0.1:9")
    cfg = mock_config(tmp_path, services={"retries": 0, "timeout": 1})
    assert main(["run", "--config", str(cfg)]) == EXIT_SERVICE


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "cfrefine.cli", "--help"], capture_output=True, text=True, check=True)
    for verb in ("run", "ablate", "report", "judge", "cda", "score", "faithfulness"):
        assert verb in out.stdout


@pytest.mark.parametrize("verb", ["run", "ablate", "report", "judge", "cda", "score", "faithfulness"])
def test_every_verb_takes_config_and_seed(verb):
    out = subprocess.run([sys.executable, "-m", "cfrefine.cli", verb, "--help"], capture_output=True, text=True, check=True)
    assert "--config" in out.stdout and "--seed" in out.stdout
