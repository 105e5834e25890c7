"""``reftrack`` command line: synth, track, train-nkf, train-refer, featurize, refer, calibrate, evaluate, demo.

Exit codes: 0 success, 2 unreadable or malformed input, 3 invalid
configuration, 4 numeric failure, 1 anything else.

Every command writes a manifest next to its output holding the seed, the
resolved configuration and SHA-256 digests of inputs and outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import calibration as calib
from . import kalman, metrics, synth
from .config import ConfigError, RunConfig, help_text
from .core import ParseError, read_descriptions, read_mot, read_scores, read_tracklets, write_mot, write_scores
from .refer import features as feats
from .refer import model as rm
from .refer import scoring
from .refer.text import TextEncoder
from .tracker import run_tracker

log = logging.getLogger("reftrack")

EXIT_OK, EXIT_OTHER, EXIT_PARSE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4

# Desk-scale learning rates for the demo; the library defaults stay at 1e-5.
DEMO_SETTINGS = (
    "nkf.lr=0.05",
    "nkf.epochs=10",
    "refer.lr=0.01",
    "refer.epochs=20",
    "refer.batch_size=8",
    "synth.referring=true",
)


# ---------------------------------------------------------------- helpers
def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _digest(path: Path) -> str:
    return synth.tree_digest(path) if path.is_dir() else sha256_file(path)


def manifest_path(out) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(command: str, args, cfg: RunConfig, inputs: dict, out, extra: dict | None = None) -> Path:
    """Deterministic run record: no timestamps, file names without directories."""
    out = Path(out)
    ins = {}
    for name, p in inputs.items():
        if p is not None:
            p = Path(p)
            ins[name] = {"file": p.name, "sha256": _digest(p)}
    record = {
        "command": command,
        "version": __version__,
        "seed": args.seed,
        "config_sha256": cfg.digest(),
        "config": cfg.to_text().splitlines(),
        "inputs": ins,
        "output": {"file": out.name, "sha256": _digest(out) if out.exists() else None},
    }
    if extra:
        record.update(extra)
    mp = manifest_path(out)
    mp.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return mp


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        _require(args.config, "config file")
    cfg = RunConfig.from_file(getattr(args, "config", None), getattr(args, "set", None))
    for flag, key in getattr(args, "_flag_keys", {}).items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg.set(key, str(v))
    return cfg


def _encoder(cfg: RunConfig, dim: int | None = None) -> TextEncoder:
    return TextEncoder(dim or cfg["synth.c_t"], cfg["synth.code_seed"])


def _features_and_tracks(path, tracks):
    path = _require(path, "features")
    store = feats.read_features(path)
    if tracks is None:
        if not path.is_dir() or not (path / "gt.txt").exists():
            raise FileNotFoundError("--tracks is required unless the features directory holds gt.txt")
        tracks = path / "gt.txt"
    return store, read_tracklets(_require(tracks, "tracks"))


# ---------------------------------------------------------------- commands
def cmd_synth(args) -> int:
    cfg = _config(args)
    base = json.loads(_require(args.spec, "scenario spec").read_text()) if args.spec else {}
    spec = cfg.scenario(base, seed=args.seed)
    out = Path(args.out)
    synth.generate(spec, out)
    write_manifest("synth", args, cfg, {"spec": args.spec}, out)
    log.info("scenario written to %s", out)
    return EXIT_OK


def _track_one(dets_path: Path, out_path: Path, cfg: RunConfig, net) -> None:
    dets = read_mot(dets_path)
    tracks = run_tracker(dets, cfg.tracker(use_nkf=net is not None), net)
    write_mot(tracks, out_path)
    log.info("%s: %d tracklets", dets_path.name, len(tracks))


def cmd_track(args) -> int:
    cfg = _config(args)
    dets = _require(args.dets, "detections")
    net = kalman.NoiseNet.load(_require(args.nkf, "noise-net weights")) if args.nkf else None
    out = Path(args.out)
    if dets.is_dir():
        out.mkdir(parents=True, exist_ok=True)
        files = sorted(dets.glob("*.txt"))
        if not files:
            raise FileNotFoundError(f"no detection files in {dets}")
        for f in files:
            _track_one(f, out / f.name, cfg, net)
    else:
        _track_one(dets, out, cfg, net)
    write_manifest("track", args, cfg, {"dets": dets, "nkf": args.nkf, "config": args.config}, out)
    return EXIT_OK


def cmd_train_nkf(args) -> int:
    cfg = _config(args)
    gt = read_tracklets(_require(args.gt, "ground truth"))
    if cfg["nkf.obs_source"] == "det":
        if not args.dets:
            raise ConfigError("--dets is required with nkf.obs_source=det")
        series = kalman.pair_series(gt, read_mot(_require(args.dets, "detections")), cfg["nkf.min_iou"])
    else:
        series = kalman.jitter_series(gt, cfg["nkf.jitter_sigma"], args.seed)
    tc = cfg.tracker()
    net = kalman.NoiseNet.init(args.seed, cfg["nkf.hidden"], base_q=tc.base_q, base_r=tc.base_r)
    res = kalman.nkf_train(series, net, epochs=cfg["nkf.epochs"], lr=cfg["nkf.lr"],
                           batch_size=cfg["nkf.batch_size"], seed=args.seed, cap=cfg["nkf.cap"],
                           optimizer=cfg["nkf.optimizer"], momentum=cfg["nkf.momentum"])
    out = Path(args.out)
    res.net.save(out)
    write_manifest("train-nkf", args, cfg, {"gt": args.gt, "dets": args.dets, "config": args.config}, out,
                   {"epoch_losses": res.epoch_losses})
    log.info("noise net loss %.6g -> %.6g", res.epoch_losses[0], res.epoch_losses[-1])
    return EXIT_OK


def _kum_config(cfg: RunConfig, store: feats.FeatureStore, encoder_dim: int) -> rm.KumConfig:
    any_local = next(iter(store.local.values()))
    return rm.KumConfig(c_v=any_local.shape[-1], c_t=encoder_dim, c=cfg["refer.c"],
                        kernels=cfg["refer.kernels"], heads=cfg["refer.heads"], gamma0=cfg["refer.gamma0"])


def cmd_train_refer(args) -> int:
    cfg = _config(args)
    store, tracks = _features_and_tracks(args.features, args.tracks)
    if not store.local:
        raise ParseError("feature file holds no local features")
    descs = read_descriptions(_require(args.desc, "descriptions"))
    enc = _encoder(cfg)
    neg = cfg["refer.negatives"]
    data = scoring.build_pairs(tracks, store, descs, cfg["refer.window"], cfg["refer.stride"],
                               None if neg < 0 else neg, args.seed, enc)
    kcfg = _kum_config(cfg, store, data.text.shape[-1])
    res = rm.train_refer(data, epochs=cfg["refer.epochs"], lr0=cfg["refer.lr"],
                         batch_size=cfg["refer.batch_size"], seed=args.seed, optimizer=cfg["refer.optimizer"],
                         momentum=cfg["refer.momentum"], alpha=cfg["refer.alpha"], gamma_f=cfg["refer.gamma_f"],
                         variant=cfg["refer.variant"], cfg=kcfg, freeze_text_head=cfg["refer.freeze_text_head"])
    out = Path(args.out)
    res.params.save(out)
    write_manifest("train-refer", args, cfg, {"features": args.features, "desc": args.desc,
                                              "tracks": args.tracks, "config": args.config}, out,
                   {"initial_loss": res.initial_loss, "final_loss": res.final_loss, "pairs": len(data)})
    log.info("focal loss %.6g -> %.6g over %d pairs", res.initial_loss, res.final_loss, len(data))
    return EXIT_OK


def cmd_featurize(args) -> int:
    cfg = _config(args)
    scen = _require(args.scenario, "scenario directory")
    world = synth.load_world(scen, args.split)
    tracks = read_tracklets(_require(args.tracks, "tracks"))
    local, glob = synth.render_features(world, tracks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = {}
    desc_file = scen / args.split / "descriptions.json"
    if desc_file.exists():
        enc = synth.text_encoder(world.spec)
        text = {d.desc_id: enc.encode(d.text) for d in read_descriptions(desc_file)}
    synth.write_features(out / "features.jsonl", local, glob, text)
    write_manifest("featurize", args, cfg, {"scenario": scen / "scenario.json", "tracks": args.tracks}, out)
    return EXIT_OK


def cmd_refer(args) -> int:
    cfg = _config(args)
    store, tracks = _features_and_tracks(args.features, args.tracks)
    descs = read_descriptions(_require(args.desc, "descriptions"))
    p = rm.KumParams.load(_require(args.weights, "weights"))
    table = scoring.score_table(p, tracks, store, descs, cfg["refer.window"], cfg["refer.stride"],
                                _encoder(cfg, p.cfg.c_t))
    out = Path(args.out)
    write_scores(table, out)
    write_manifest("refer", args, cfg, {"tracks": args.tracks, "features": args.features, "desc": args.desc,
                                        "weights": args.weights, "config": args.config}, out)
    log.info("%d scores written", len(table))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    scores = _require(args.scores, "scores")
    table = read_scores(scores)
    train = read_descriptions(_require(args.train_desc, "training descriptions"))
    test = read_descriptions(_require(args.desc, "test descriptions"))
    ccfg = cfg.calibration()
    out = Path(args.out)
    new, freqs = calib.calibrate_table(table, test, train, ccfg, _encoder(cfg))
    write_scores(new, out)
    write_manifest("calibrate", args, cfg, {"scores": scores, "train_desc": args.train_desc,
                                            "desc": args.desc, "config": args.config}, out,
                   {"pseudo_frequency": {str(k): v for k, v in sorted(freqs.items())}})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    gt = read_tracklets(_require(args.gt, "ground truth"))
    pred = read_tracklets(_require(args.pred, "predictions"))
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(names) - {"hota", "mota", "idf1"}
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}")
    if args.oracle:
        pred = metrics.oracle_revise(pred, gt)
    if args.scores:
        if not args.desc:
            raise ConfigError("--scores needs --desc")
        table = read_scores(_require(args.scores, "scores"))
        descs = read_descriptions(_require(args.desc, "descriptions"))
        th = args.threshold
        if th is None:
            th = cfg["calib.threshold"] if args.calibrated else cfg["refer.threshold"]
        res = metrics.referring_eval(gt, descs, pred, table, th, cfg["refer.granularity"])
    else:
        res = metrics.evaluate(gt, pred, names)
    keys = [k for k in res.METRICS if k in names or (k not in ("mota", "idf1") and "hota" in names)]
    text = res.report(keys)
    print(text)
    if args.out:
        out = Path(args.out)
        out.write_text(json.dumps({k: getattr(res, k) for k in keys}, indent=1, sort_keys=True) + "\n")
        write_manifest("evaluate", args, cfg, {"gt": args.gt, "pred": args.pred, "scores": args.scores,
                                               "desc": args.desc, "config": args.config}, out)
    return EXIT_OK


def cmd_demo(args) -> int:
    """synth -> train-nkf -> track (NKF) -> train-refer -> featurize -> refer -> calibrate -> evaluate."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_file = out / "demo.cfg"
    lines = list(DEMO_SETTINGS)
    if args.config:
        lines += [l for l in _require(args.config, "config file").read_text().splitlines()]
    cfg_file.write_text("\n".join(lines) + "\n", encoding="utf-8")
    common = ["--config", str(cfg_file), "--seed", str(args.seed)]
    for item in args.set or []:
        common += ["--set", item]
    scen = out / "scenario"
    steps = [
        ["synth", "--out", str(scen)],
        ["train-nkf", "--gt", str(scen / "train/gt.txt"), "--dets", str(scen / "train/dets.txt"),
         "--out", str(out / "nkf.json")],
        ["track", "--dets", str(scen / "test/dets.txt"), "--nkf", str(out / "nkf.json"),
         "--out", str(out / "tracks.txt")],
        ["train-refer", "--features", str(scen / "train"), "--desc", str(scen / "train/descriptions.json"),
         "--out", str(out / "kum.json")],
        ["featurize", "--scenario", str(scen), "--split", "test", "--tracks", str(out / "tracks.txt"),
         "--out", str(out / "test_features")],
        ["refer", "--tracks", str(out / "tracks.txt"), "--features", str(out / "test_features"),
         "--desc", str(scen / "test/descriptions.json"), "--weights", str(out / "kum.json"),
         "--out", str(out / "scores.jsonl")],
        ["calibrate", "--scores", str(out / "scores.jsonl"), "--train-desc", str(scen / "train/descriptions.json"),
         "--desc", str(scen / "test/descriptions.json"), "--out", str(out / "scores_calibrated.jsonl")],
        ["evaluate", "--gt", str(scen / "test/gt.txt"), "--pred", str(out / "tracks.txt"),
         "--out", str(out / "eval_tracking.json")],
        ["evaluate", "--gt", str(scen / "test/gt.txt"), "--pred", str(out / "tracks.txt"),
         "--scores", str(out / "scores.jsonl"), "--desc", str(scen / "test/descriptions.json"),
         "--out", str(out / "eval_refer.json")],
        ["evaluate", "--gt", str(scen / "test/gt.txt"), "--pred", str(out / "tracks.txt"),
         "--scores", str(out / "scores_calibrated.jsonl"), "--desc", str(scen / "test/descriptions.json"),
         "--calibrated", "--out", str(out / "eval_refer_calibrated.json")],
    ]
    for step in steps:
        t0 = time.perf_counter()
        code = main(step + common)
        log.info("%s finished in %.1f s", step[0], time.perf_counter() - t0)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# ---------------------------------------------------------------- parser
class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed, recorded in the manifest")
    if config:
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _flag(p, name: str, key: str, typ, keys: dict) -> None:
    from .config import SCHEMA

    dest = name.lstrip("-").replace("-", "_")
    p.add_argument(name, dest=dest, type=typ, default=None,
                   help=f"overrides {key} (default: {SCHEMA[key].default})")
    keys[dest] = key


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reftrack", description=__doc__, epilog=help_text(),
                                 formatter_class=_Formatter)
    ap.add_argument("--version", action="version", version=f"reftrack {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=help_text(), formatter_class=_Formatter)
        p.set_defaults(func=fn, _flag_keys={})
        return p

    p = add("synth", cmd_synth, "generate a seeded train/test scenario")
    p.add_argument("--spec", help="JSON scenario spec; synth.* keys override it")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = add("track", cmd_track, "track a detection file (or a directory of them)")
    p.add_argument("--dets", required=True)
    p.add_argument("--nkf", help="noise-net weights; enables the neural filter")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = add("train-nkf", cmd_train_nkf, "fit the noise networks on gt-paired detections")
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", help="detections paired with the gt (obs source det)")
    _flag(p, "--obs-source", "nkf.obs_source", str, p.get_default("_flag_keys"))
    _flag(p, "--epochs", "nkf.epochs", int, p.get_default("_flag_keys"))
    _flag(p, "--lr", "nkf.lr", float, p.get_default("_flag_keys"))
    p.add_argument("--out", required=True)
    _add_common(p)

    p = add("train-refer", cmd_train_refer, "train the referring scorer on ground-truth tracklets")
    p.add_argument("--features", required=True, help="feature file or directory")
    p.add_argument("--tracks", help="tracklets to window (default: gt.txt in the features directory)")
    p.add_argument("--desc", required=True)
    _flag(p, "--variant", "refer.variant", str, p.get_default("_flag_keys"))
    _flag(p, "--epochs", "refer.epochs", int, p.get_default("_flag_keys"))
    _flag(p, "--lr", "refer.lr", float, p.get_default("_flag_keys"))
    p.add_argument("--out", required=True)
    _add_common(p)

    p = add("featurize", cmd_featurize, "render synthetic features for arbitrary tracklets")
    p.add_argument("--scenario", required=True, help="directory written by synth")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--tracks", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = add("refer", cmd_refer, "score tracklets against descriptions")
    p.add_argument("--tracks", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--desc", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = add("calibrate", cmd_calibrate, "shift scores by the pseudo frequency of each description")
    p.add_argument("--scores", required=True)
    p.add_argument("--train-desc", required=True, help="training descriptions with frequencies")
    p.add_argument("--desc", required=True, help="descriptions the scores refer to")
    _flag(p, "--tau", "calib.tau", float, p.get_default("_flag_keys"))
    _flag(p, "--a", "calib.a", float, p.get_default("_flag_keys"))
    _flag(p, "--b", "calib.b", float, p.get_default("_flag_keys"))
    p.add_argument("--out", required=True)
    _add_common(p)

    p = add("evaluate", cmd_evaluate, "tracking or referring metrics")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--metrics", default="hota,mota,idf1")
    p.add_argument("--oracle", action="store_true", help="snap matched boxes onto the ground truth first")
    p.add_argument("--scores", help="score table; switches to referring evaluation")
    p.add_argument("--desc", help="descriptions with positives (referring evaluation)")
    p.add_argument("--threshold", type=float,
                   help="selection threshold (default: refer.threshold, or calib.threshold with --calibrated)")
    p.add_argument("--calibrated", action="store_true", help="scores were calibrated")
    p.add_argument("--out", help="write the metrics as JSON")
    _add_common(p)

    p = add("demo", cmd_demo, "run the whole pipeline on a seeded scenario")
    p.add_argument("--out", required=True)
    _add_common(p)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, FileNotFoundError, IsADirectoryError, feats.FeatureGapError) as exc:
        print(f"reftrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, synth.SpecError, rm.DegenerateDatasetError, metrics.UndefinedMetricError) as exc:
        print(f"reftrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (kalman.NumericError, rm.DegenerateInputError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"reftrack {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"reftrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"reftrack {args.command}: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
