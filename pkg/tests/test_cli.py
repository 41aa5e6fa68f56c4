import json
import shutil

import pytest

from beatsynth import cli, pipeline
from beatsynth.errors import NumericError
from beatsynth.io import read_ndjson, write_json

from conftest import toy_config_path

FIXTURES = toy_config_path().parent

SMALL = {
    "seed": 3,
    "segment": {"length": 32},
    "ddpm": {"T": 5, "steps": 3, "hidden": 4, "emb_dim": 4, "batch_size": 4},
    "wgan": {"steps": 2, "batch_size": 4, "n_critic": 1, "latent_dim": 8, "generator_widths": [8, 4],
             "critic_widths": [4, 8]},
    "harness": {"train_per_class": 60, "minority": 3, "test_per_class": 30, "classifier_widths": [4, 8],
                "epochs": 2},
    "plots": False,
}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture()
def small_config(tmp_path):
    path = tmp_path / "small.json"
    write_json(path, SMALL)
    return path


@pytest.fixture()
def beats(tmp_path, small_config):
    """Both fixture records ingested and segmented under the small config, in one NDJSON file."""
    rows = []
    for name in ("toyN", "toyL"):
        rec, seg = tmp_path / f"{name}.rec.ndjson", tmp_path / f"{name}.beats.ndjson"
        assert run("ingest", "--dat", FIXTURES / f"{name}.dat", "--ann", FIXTURES / f"{name}.csv",
                   "--out", rec, "--config", small_config) == 0
        assert run("--config", small_config, "segment", "--in", rec, "--out", seg) == 0
        rows += read_ndjson(seg)
    out = tmp_path / "beats.ndjson"
    out.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return out


def test_full_chain_of_subcommands(tmp_path, small_config, beats):
    cfg = ["--config", small_config]
    rows = read_ndjson(beats)
    assert {r["label"] for r in rows} == {"N", "L"} and all(len(r["samples"]) == 32 for r in rows)

    tsim, ckpt, samples = tmp_path / "b.tsim", tmp_path / "d.tsnn", tmp_path / "s.tsim"
    assert run("embed", "--in", beats, "--out", tsim, *cfg) == 0
    assert run("train-ddpm", "--case", "01", "--data", tsim, "--steps", 2, "--out", ckpt, *cfg) == 0
    trace = (tmp_path / "d_trace.csv").read_text().splitlines()
    assert trace[0].startswith("# config_hash=") and trace[1] == "step,objective,loss,t_mean" and len(trace) == 4
    assert run("sample-ddpm", "--ckpt", ckpt, "--n", 3, "--out", samples, *cfg) == 0
    assert run("deembed", "--in", samples, "--out", tmp_path / "d.ndjson", *cfg) == 0
    assert len(read_ndjson(tmp_path / "d.ndjson")) == 3

    gan, gan_beats = tmp_path / "g.tsnn", tmp_path / "g.ndjson"
    assert run("train-wgangp", "--data", beats, "--out", gan, *cfg) == 0
    assert (tmp_path / "g_trace.csv").read_text().splitlines()[1] == "step,w_estimate,d_loss,g_loss"
    assert run("sample-wgangp", "--ckpt", gan, "--n", 60, "--out", gan_beats, "--seed", 3, *cfg) == 0

    report = tmp_path / "report.json"
    assert run("evaluate", "--real", beats, "--synth", gan_beats, "--case-id", "GAN", "--out", report, *cfg) == 0
    doc = json.loads(report.read_text())
    assert doc["case_id"] == "GAN" and doc["config"]["seed"] == 3
    assert doc["config_hash"] == rows[0]["config_hash"]
    assert sum(doc["report"]["confusion"][0]) == pytest.approx(100.0)

    svg = tmp_path / "svg"
    assert run("plot", "--report", report, "--trace", tmp_path / "g_trace.csv", "--out", svg) == 0
    assert sorted(p.name for p in svg.iterdir()) == ["GAN_beats.svg", "GAN_pr.svg", "GAN_roc.svg", "g_trace.svg"]
    assert doc["config_hash"] in (svg / "GAN_roc.svg").read_text()


def test_seed_flag_accepted_before_and_after_subcommand(tmp_path):
    a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    args = ["--dat", FIXTURES / "toyN.dat", "--ann", FIXTURES / "toyN.csv"]
    assert run("--seed", 5, "ingest", *args, "--out", a) == 0
    assert run("ingest", *args, "--out", b, "--seed", 5) == 0
    assert a.read_bytes() == b.read_bytes()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"segmnt": {}}')
    assert run("run", "--config", bad, "--out", tmp_path / "o") == 2
    assert "segmnt" in capsys.readouterr().err
    assert run("run", "--out", tmp_path / "o") == 2


def test_data_errors_exit_3(tmp_path, capsys):
    assert run("ingest", "--dat", tmp_path / "missing.dat", "--ann", FIXTURES / "toyN.csv", "--out",
               tmp_path / "x") == 3
    corrupt = tmp_path / "corrupt.tsim"
    corrupt.write_bytes(b"XXXX" + b"\0" * 64)
    assert run("deembed", "--in", corrupt, "--out", tmp_path / "y.ndjson") == 3
    assert "corrupt.tsim" in capsys.readouterr().err


def test_numeric_failure_exits_4(tmp_path, beats, monkeypatch):
    def explode(*a, **k):
        raise NumericError("non-finite WGAN-GP loss at step 1")
    monkeypatch.setattr(pipeline.wgan_gp, "train_wgan_gp", explode)
    assert run("train-wgangp", "--data", beats, "--out", tmp_path / "g.tsnn") == 4


def test_evaluate_refuses_mixed_hashes(tmp_path, small_config, beats, capsys):
    other = tmp_path / "other.ndjson"
    shutil.copy(beats, other)
    text = other.read_text()
    h = read_ndjson(beats)[0]["config_hash"]
    other.write_text(text.replace(h, "f" * 64))
    assert run("evaluate", "--real", beats, "--synth", other, "--case-id", "X", "--out", tmp_path / "r.json") == 2
    assert "different configs" in capsys.readouterr().err


def test_explicit_config_must_match_input_hash(tmp_path, small_config, beats):
    other = tmp_path / "other.json"
    write_json(other, dict(SMALL, seed=4))
    assert run("embed", "--in", beats, "--out", tmp_path / "x.tsim", "--config", other) == 2
