import json
import os

import pytest

from egodiff.cli import main, resolve_config, UsageError

DEMO = os.path.join(os.path.dirname(__file__), os.pardir, "configs", "demo.json")


def _paths(tmp_path):
    return ["--config", DEMO, "--set", f"paths.bundle={json.dumps(str(tmp_path / 'bundle'))}",
            "--set", f"paths.out_dir={json.dumps(str(tmp_path / 'out'))}"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("demo")
    for cmd in ("synth", "train", "score", "eval", "solver-compare", "energy-hist"):
        assert main([cmd] + _paths(tmp)) == 0, cmd
    return tmp


def test_pipeline_artifacts(pipeline):
    out = pipeline / "out"
    names = set(os.listdir(out))
    for f in ("config.resolved.json", "trials.json", "loss_t0.csv", "loss_t1.csv",
              "scores_t0.csv", "scores_t1.csv", "breakdown_t0.csv", "eval.csv",
              "solver_profile.csv", "energy.csv", "checkpoint_t0", "checkpoint_t1"):
        assert f in names, f
    trials = json.loads((out / "trials.json").read_text())
    assert len(trials) == 2
    assert (trials[0]["lr"], trials[0]["hidden_dim"]) != (trials[1]["lr"], trials[1]["hidden_dim"]) \
        or trials[0]["seed"] != trials[1]["seed"]
    head = (out / "scores_t0.csv").read_text().splitlines()[0]
    assert head == "node_id,score,label"
    assert (out / "solver_profile.csv").read_text().count("\n") == 1 + 4 * 2
    ev = (out / "eval.csv").read_text().splitlines()
    assert ev[0] == "trial,metric,value" and any(l.startswith("mean,roc_auc,") for l in ev)


def test_pipeline_deterministic(pipeline, tmp_path):
    for cmd in ("synth", "train", "score", "eval", "solver-compare", "energy-hist"):
        assert main([cmd] + _paths(tmp_path)) == 0
    for f in ("loss_t0.csv", "loss_t1.csv", "scores_t0.csv", "scores_t1.csv", "breakdown_t1.csv",
              "eval.csv", "solver_profile.csv", "energy.csv", "trials.json"):
        assert (pipeline / "out" / f).read_bytes() == (tmp_path / "out" / f).read_bytes(), f


def test_eval_hand_fixture(tmp_path):
    scores = tmp_path / "s.csv"
    scores.write_text("node_id,score,label\n0,0.9,1\n1,0.8,0\n2,0.1,1\n3,0.0,0\n")
    out = tmp_path / "out"
    assert main(["eval", "--set", f"paths.scores={json.dumps(str(scores))}",
                 "--set", f"paths.out_dir={json.dumps(str(out))}"]) == 0
    rows = dict(((r.split(",")[0], r.split(",")[1]), float(r.split(",")[2]))
                for r in (out / "eval.csv").read_text().splitlines()[1:])
    assert rows[("0", "roc_auc")] == pytest.approx(0.75)
    assert rows[("0", "average_precision")] == pytest.approx(0.8333333333333334)
    assert rows[("0", "recall_at_k")] == pytest.approx(0.5)


def test_unknown_keys_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"train": {"epoch": 3}}')
    assert main(["train", "--config", str(bad)]) == 1
    assert "train.epoch" in capsys.readouterr().err
    with pytest.raises(UsageError):
        resolve_config(None, ["nosuch.key=1"])
    assert main(["train", "--set", "train.epochs"]) == 1


def test_print_config(capsys):
    assert main(["score", "--set", "scoring.levels=2", "--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["scoring"]["levels"] == 2
    assert cfg["train"]["weight_decay"] == 0.01 and cfg["train"]["epochs"] == 300
    assert cfg["scoring"]["alpha"] == [0.8, 0.5, 0.2]


def test_exit_codes(tmp_path, capsys):
    missing = json.dumps(str(tmp_path / "nope"))
    assert main(["train", "--set", f"paths.bundle={missing}",
                 "--set", f"paths.out_dir={json.dumps(str(tmp_path / 'o'))}"]) == 2
    assert "nope" in capsys.readouterr().err
    assert main(["score", "--set", "scoring.solver=\"s4\""]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--help"])
    text = capsys.readouterr().out
    for key in ("sde.t_eps", "ego.max_nodes", "train.trials", "scoring.corrector_order",
                "paths.checkpoint", "synth.clique_size", "analysis.taus"):
        assert key in text
