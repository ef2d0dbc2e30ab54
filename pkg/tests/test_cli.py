import csv
import io
import json

import numpy as np
import pytest

from inattention import __version__
from inattention.cli import main
from inattention.dataset import YOUTUBE_SCHEMA, parse_csv
from inattention.estimators import PolicyOptimizer, RationalInattentionTest
from inattention.simulate import AgentSpec, gen_rational_agent, sample_dataset


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def rational_model(tmp_path):
    path = tmp_path / "model.json"
    assert run("simulate", "--seed", 7, "--exact", "-o", path) == 0
    return path


# --- exit codes -------------------------------------------------------------------


def test_rational_agent_exits_zero(rational_model, tmp_path, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO(rational_model.read_text()))
    out = tmp_path / "niat.json"
    assert run("test-niat", "-", "-o", out) == 0
    assert json.loads(out.read_text())["result"]["verdict"] == "rationalizable"


def test_nias_fixture_exits_one(tmp_path):
    m = tmp_path / "bad.json"
    assert run("simulate", "--kind", "nias", "--seed", 0, "-o", m) == 0
    assert run("test-niat", m, "-o", tmp_path / "r.json") == 1


def test_beta_one_is_a_usage_error(rational_model, capsys):
    assert run("test-renyi", rational_model, "--beta", "1.0") == 2
    assert "not covered" in capsys.readouterr().err


def test_bad_input_is_a_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x,f,a,k\n1,1,1,x,1\n")
    assert run("ingest", bad) == 2
    assert "bad.csv:2" in capsys.readouterr().err


def test_unknown_subcommand_and_help(capsys):
    assert run("frobnicate") == 2
    assert run("--help") == 0
    out = capsys.readouterr().out
    for name in ("ingest", "cluster-frames", "test-niat", "optimize-policy", "report"):
        assert name in out


def test_version(capsys):
    assert run("--version") == 0
    assert __version__ in capsys.readouterr().out


# --- config ----------------------------------------------------------------------


def test_config_sets_defaults(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# simulator settings\nseed = 7\nexact = true\n")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("--config", cfg, "simulate", "-o", a) == 0
    assert run("simulate", "--seed", 7, "--exact", "-o", b) == 0
    assert a.read_bytes() == b.read_bytes()
    # flags override the file
    c = tmp_path / "c.json"
    assert run("--config", cfg, "simulate", "--seed", 8, "-o", c) == 0
    assert c.read_bytes() != b.read_bytes()


def test_config_rejects_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 7\ncolour = blue\n")
    assert run("--config", cfg, "simulate") == 2
    assert "unknown key 'colour'" in capsys.readouterr().err


def test_config_rejects_out_of_range_value(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("gamma = 1.5\n")
    assert run("--config", cfg, "optimize-policy", "x.csv", "--utility", "u.json") == 2


# --- report ------------------------------------------------------------------------


def test_empty_artifact_directory_is_an_error(tmp_path, capsys):
    assert run("report", tmp_path) == 2
    assert "no artifacts" in capsys.readouterr().err


def test_report_lists_witness_utility(rational_model, tmp_path):
    out = tmp_path / "arts"
    out.mkdir()
    assert run("test-niat", rational_model, "-o", out / "niat.json") == 0
    text_path = tmp_path / "report.txt"
    assert run("report", out, "-o", text_path, "--csv", tmp_path / "u.csv") == 0
    text = text_path.read_text()
    assert "rationalizable" in text and "frame 1" in text
    rows = list(csv.DictReader((tmp_path / "u.csv").open()))
    assert rows and set(rows[0]) == {"frame", "state", "action", "state_label", "action_label", "utility"}


def test_youtube_schema_labels(tmp_path):
    d = tmp_path / "d.csv"
    assert run("simulate", "--seed", 3, "--states", 2, "--actions", "6,6", "--T", 3000, "-o", d) == 0
    arts = tmp_path / "arts"
    arts.mkdir()
    # 2 problems x 6 actions per posterior need more binaries than the default 64
    assert run("test-niat", d, "--schema", "youtube", "--max-binaries", 200, "-o", arts / "niat.json") == 0
    assert run("report", arts, "-o", tmp_path / "r.txt", "--csv", tmp_path / "u.csv") == 0
    labels = {r["action_label"] for r in csv.DictReader((tmp_path / "u.csv").open())}
    assert labels == set(YOUTUBE_SCHEMA.action_labels)
    assert "viewcount above 10,000" in (tmp_path / "r.txt").read_text()


# --- frame clustering substitution -------------------------------------------------


def test_cluster_frames_relabels_dataset(tmp_path):
    rng = np.random.default_rng(0)
    n_per, d_in = 40, 6
    centers = 8 * np.eye(d_in)[:2]
    X = np.vstack([c + rng.standard_normal((n_per, d_in)) for c in centers])
    T = len(X)
    feats = tmp_path / "feats.csv"
    with feats.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"v{i + 1}" for i in range(d_in)])
        for t, row in enumerate(X, start=1):
            w.writerow([t] + [repr(float(v)) for v in row])
    agent = gen_rational_agent(AgentSpec(2, (2,), 2), seed=1)
    data = tmp_path / "d.csv"
    data.write_text(sample_dataset(agent, T, seed=2).to_csv())
    args = [
        "cluster-frames", feats, "-o", tmp_path / "frames.csv", "--n-clusters", 2,
        "--pretrain-epochs", 20, "--dataset", data, "--dataset-out", tmp_path / "relabel.csv",
        "--summary", tmp_path / "s.json", "--delta-c", 0.5,
    ]
    assert run(*args) == 0
    summary = json.loads((tmp_path / "s.json").read_text())
    relabelled = parse_csv((tmp_path / "relabel.csv").read_text())
    assert relabelled.T == T - summary["discarded"]
    frames = {int(r["t"]): int(r["frame"]) for r in csv.DictReader((tmp_path / "frames.csv").open())}
    assert all(frames[t] == f for t, f in zip(relabelled.t, relabelled.f))
    # the learned frames separate the two blobs
    first = {frames[t] for t in range(1, n_per + 1)} - {-1}
    second = {frames[t] for t in range(n_per + 1, T + 1)} - {-1}
    assert len(first) == 1 and len(second) == 1 and first != second


# --- determinism -------------------------------------------------------------------


def pipeline(root):
    root.mkdir()
    assert run("simulate", "--seed", 5, "--actions", "2,3", "--T", 400, "-o", root / "d.csv",
               "--agent-out", root / "agent.json") == 0
    assert run("estimate", root / "d.csv", "-o", root / "model.json") == 0
    assert run("test-niat", root / "model.json", "-o", root / "niat.json") == 0
    assert run("recover-cost", root / "model.json", "--utility", root / "niat.json", "-o", root / "cost.json") == 0
    assert run("optimize-policy", root / "d.csv", "--utility", root / "niat.json", "--lambda-bar", 1.0,
               "-o", root / "policy.json") == 0
    run("test-renyi", root / "model.json", "--beta", 0.5, "-o", root / "renyi.json")
    return {p.name: p.read_bytes() for p in sorted(root.glob("*.json"))}


def test_pipeline_is_byte_identical(tmp_path):
    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    assert set(a) == {"agent.json", "model.json", "niat.json", "cost.json", "policy.json", "renyi.json"}
    assert a == b


# --- estimators --------------------------------------------------------------------


def test_rationality_estimator_on_records():
    agent = gen_rational_agent(AgentSpec(2, (2, 2), 1), seed=4)
    d = sample_dataset(agent, 500, seed=1)
    arr = np.column_stack([d.t, d.x, d.f, d.a, d.k])
    est = RationalInattentionTest().fit(arr)
    assert est.verdict_ in ("rationalizable", "not-rationalizable")
    assert est.utility_ is None or est.utility_.shape[1] == 2
    assert RationalInattentionTest(max_binaries=8).get_params()["max_binaries"] == 8


def test_policy_optimizer_estimator():
    agent = gen_rational_agent(AgentSpec(2, (2,), 1), seed=6)
    d = sample_dataset(agent, 300, seed=2)
    opt = PolicyOptimizer(lam_bar=0.0).fit(d, agent.utility)
    proba = opt.predict_proba([[1, 1, 1], [1, 1, 2]])
    assert np.allclose(proba.sum(axis=1), 1.0)
    expected = np.argmax(agent.utility[0], axis=1) + 1
    assert np.array_equal(opt.predict([[1, 1, 1], [1, 1, 2]]), expected)
    with pytest.raises(ValueError):
        opt.predict([[2, 1, 1]])
