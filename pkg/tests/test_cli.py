import json

import pytest

from reftrack import synth
from reftrack.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARSE, build_parser, main
from reftrack.config import ConfigError, RunConfig
from reftrack.core import read_scores, read_tracklets
from reftrack.metrics import evaluate

SMALL = ["--set", "synth.referring=true", "--set", "synth.n_objects=4", "--set", "synth.n_frames=24",
         "--set", "synth.c_v=16", "--set", "synth.c_t=8", "--set", "synth.s_g=4"]


@pytest.fixture(scope="module")
def scen(tmp_path_factory):
    out = tmp_path_factory.mktemp("scen")
    assert main(["synth", "--out", str(out), "--seed", "1"] + SMALL) == EXIT_OK
    return out


def test_missing_file_exits_parse(tmp_path):
    assert main(["track", "--dets", str(tmp_path / "nope.txt"), "--out", str(tmp_path / "o.txt")]) == EXIT_PARSE


def test_unknown_config_key_exits_config(tmp_path, scen):
    out = str(tmp_path / "o.txt")
    assert main(["track", "--dets", str(scen / "train/dets.txt"), "--out", out, "--set", "tracker.nope=1"]) \
        == EXIT_CONFIG
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("tracker.max_age = 5\nbroken line\n")
    assert main(["track", "--dets", str(scen / "train/dets.txt"), "--out", out, "--config", str(cfg)]) \
        == EXIT_CONFIG


def test_train_nkf_det_source_needs_dets(tmp_path, scen):
    args = ["train-nkf", "--gt", str(scen / "train/gt.txt"), "--out", str(tmp_path / "w.json"),
            "--set", "nkf.obs_source=det"]
    assert main(args) == EXIT_CONFIG


def test_evaluate_gt_against_itself(tmp_path, scen, capsys):
    out = tmp_path / "m.json"
    gt = str(scen / "test/gt.txt")
    assert main(["evaluate", "--gt", gt, "--pred", gt, "--out", str(out)]) == EXIT_OK
    vals = json.loads(out.read_text())
    assert vals["hota"] == vals["mota"] == vals["idf1"] == 1.0
    assert "hota" in capsys.readouterr().out
    assert main(["evaluate", "--gt", gt, "--pred", gt, "--metrics", "mAP"]) == EXIT_CONFIG


def test_noiseless_scene_tracks_perfectly(tmp_path):
    scen = tmp_path / "s"
    clean = ["--set", "synth.det_sigma=0", "--set", "synth.miss_rate=0", "--set", "synth.fp_rate=0",
             "--set", "synth.n_objects=3", "--set", "synth.n_frames=40"]
    assert main(["synth", "--out", str(scen), "--seed", "0"] + clean) == EXIT_OK
    out = tmp_path / "tracks.txt"
    assert main(["track", "--dets", str(scen / "train/dets.txt"), "--out", str(out),
                 "--set", "tracker.n_init=1"]) == EXIT_OK
    gt = read_tracklets(scen / "train/gt.txt")
    assert evaluate(gt, read_tracklets(out), ["idf1"]).idf1 == 1.0
    assert (tmp_path / "tracks.txt.manifest.json").exists()


def test_pipeline_chain(tmp_path, scen):
    """train-nkf, track --nkf, train-refer, featurize, refer, calibrate and evaluate on a tiny scene."""
    w = tmp_path / "nkf.json"
    assert main(["train-nkf", "--gt", str(scen / "train/gt.txt"), "--dets", str(scen / "train/dets.txt"),
                 "--set", "nkf.epochs=1", "--set", "nkf.obs_source=det", "--out", str(w)]) == EXIT_OK
    tracks = tmp_path / "tracks.txt"
    assert main(["track", "--dets", str(scen / "test/dets.txt"), "--nkf", str(w), "--out", str(tracks)]) == EXIT_OK
    kum = tmp_path / "kum.json"
    assert main(["train-refer", "--features", str(scen / "train"), "--desc", str(scen / "train/descriptions.json"),
                 "--variant", "cascade", "--set", "refer.epochs=1", "--out", str(kum)] + SMALL[2:]) == EXIT_OK
    feats = tmp_path / "feats"
    assert main(["featurize", "--scenario", str(scen), "--tracks", str(tracks), "--out", str(feats)]) == EXIT_OK
    scores = tmp_path / "scores.jsonl"
    assert main(["refer", "--tracks", str(tracks), "--features", str(feats), "--desc",
                 str(scen / "test/descriptions.json"), "--weights", str(kum), "--out", str(scores)]) == EXIT_OK
    assert len(read_scores(scores).rows) > 0
    noop, cal = tmp_path / "noop.jsonl", tmp_path / "cal.jsonl"
    common = ["calibrate", "--scores", str(scores), "--train-desc", str(scen / "train/descriptions.json"),
              "--desc", str(scen / "test/descriptions.json")]
    assert main(common + ["--a", "0", "--b", "0", "--out", str(noop)]) == EXIT_OK
    assert noop.read_bytes() == scores.read_bytes()
    assert main(common + ["--out", str(cal)]) == EXIT_OK
    assert cal.read_bytes() != scores.read_bytes()
    res = tmp_path / "refer.json"
    assert main(["evaluate", "--gt", str(scen / "test/gt.txt"), "--pred", str(tracks), "--scores", str(cal),
                 "--desc", str(scen / "test/descriptions.json"), "--calibrated", "--out", str(res)]) == EXIT_OK
    assert 0.0 <= json.loads(res.read_text())["hota"] <= 1.0


def test_synth_is_deterministic(tmp_path):
    # the manifest records the output name, so both runs use the same leaf
    for d in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / d / "scen"), "--seed", "3"] + SMALL) == EXIT_OK
    assert synth.tree_digest(tmp_path / "a/scen") == synth.tree_digest(tmp_path / "b/scen")


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["calibrate", "--help"])
    text = capsys.readouterr().out
    assert "calib.tau" in text and "100" in text
    assert "tracker.max_age" in text


def test_run_config_layers(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\ntracker.max_age = 12\ncalib.a=4\n")
    cfg = RunConfig.from_file(f, ["calib.a=2"])
    assert cfg["tracker.max_age"] == 12 and cfg["calib.a"] == 2.0
    assert cfg.tracker().max_age == 12
    assert cfg.calibration().a == 2.0
    assert RunConfig()["calib.tau"] == 100.0
    assert RunConfig.from_file(f).digest() == RunConfig.from_file(f).digest()
    with pytest.raises(ConfigError):
        RunConfig().set("tracker.max_age", "many")
    with pytest.raises(ConfigError):
        RunConfig.from_file(None, ["no_equals"])
