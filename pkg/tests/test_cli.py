import json

import pytest

from tracer.cli import main
from tracer.data.report import load_report

DIGITS = """\
[data]
kind = digits
[model]
epochs = 3
[explain]
samples = 1
"""

BLOBS = """\
[data]
kind = blobs
blobs_n = 200
[model]
epochs = 5
[explain]
strategy = single-feature
samples = 2
[counterfactual]
steps = 100
samples = 2
[reliability]
trials = 2
samples = 20
[global]
samples = 20
repeats = 10
"""


def write_config(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def digits_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("digits")
    cfg = write_config(tmp, DIGITS)
    out = tmp / "out"
    assert run("train", "--config", cfg, "--out", out, "--workers", 1) == 0
    assert run("explain", "--config", cfg, "--out", out, "--workers", 1) == 0
    return cfg, out


def test_explain_file_contract(digits_run):
    _, out = digits_run
    sample_dirs = sorted(p for p in (out / "explain").iterdir() if p.is_dir())
    assert len(sample_dirs) == 1
    d = sample_dirs[0]
    for name in ("report.json", "graph.dot", "graph.json", "cka.csv", "attribution.png", "cka.png"):
        assert (d / name).is_file(), name
    assert list(d.glob("*.pgm"))
    report = load_report(d / "report.json")
    assert report.attribution.shape == (1, 8, 8)
    assert report.config_digest == json.loads((out / "explain" / "summary.json").read_text())["config_digest"]
    assert (d / "graph.dot").read_text().startswith("digraph")
    manifest = json.loads((out / "manifests" / "explain.json").read_text())
    assert any(k.endswith("report.json") for k in manifest["outputs"])


def test_invalid_epsilon_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "[explain]\nepsilon = 1.5\n")
    assert run("explain", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "explain.epsilon" in capsys.readouterr().err


def test_missing_model_exits_2_with_path(tmp_path, capsys):
    cfg = write_config(tmp_path, DIGITS)
    out = tmp_path / "empty"
    assert run("explain", "--config", cfg, "--out", out) == 2
    err = capsys.readouterr().err
    assert str(out / "model.tmodel") in err


def test_missing_config_exits_2(tmp_path, capsys):
    assert run("train", "--config", tmp_path / "nope.ini", "--out", tmp_path / "o") == 2
    assert "nope.ini" in capsys.readouterr().err


def test_missing_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("TRACER_OUT", raising=False)
    assert run("train", "--config", write_config(tmp_path, DIGITS)) == 2
    assert "TRACER_OUT" in capsys.readouterr().err


def test_init_template(tmp_path):
    p = tmp_path / "t.ini"
    assert run("init", p) == 0
    assert "epsilon = 0.05" in p.read_text()
    assert run("init", p) == 2


def test_env_output_fallback_and_reproducibility(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, BLOBS)
    outputs = []
    for name, workers in (("a", 1), ("b", 2)):
        out = tmp_path / name
        monkeypatch.setenv("TRACER_OUT", str(out))
        for cmd in ("train", "explain", "graph", "aggregate", "cf-train", "cf-generate", "reliability"):
            assert run(cmd, "--config", cfg, "--workers", workers) == 0, cmd
        outputs.append(out)
    a, b = outputs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and "timing" not in p.parts)
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file() and "timing" not in p.parts)
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_commands_do_not_mutate_inputs(digits_run):
    cfg, out = digits_run
    model = (out / "model.tmodel").read_bytes()
    config = cfg.read_bytes()
    assert run("explain", "--config", cfg, "--out", out, "--workers", 1) == 0
    assert (out / "model.tmodel").read_bytes() == model
    assert cfg.read_bytes() == config


def test_bad_subcommand_and_worker_count(tmp_path):
    assert run("frobnicate") == 2
    cfg = write_config(tmp_path, DIGITS)
    assert run("train", "--config", cfg, "--out", tmp_path / "o", "--workers", 0) == 2
