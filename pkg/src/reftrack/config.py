"""Namespaced run settings for the command-line front end.

Settings are ``namespace.key=value`` lines (``#`` starts a comment). Five
namespaces exist: ``tracker``, ``nkf``, ``refer``, ``calib`` and
``synth``. Unknown keys are errors. Command-line flags override the file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import MISSING, dataclass, fields
from pathlib import Path
from typing import Any, Callable

from .calibration import BACKENDS, CalibrationConfig
from .refer.model import VARIANTS
from .synth import ScenarioSpec
from .tracker import TrackerConfig


class ConfigError(ValueError):
    """Unknown key, malformed line or invalid value in a run config."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(options) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _json(s: str):
    return json.loads(s)


@dataclass(frozen=True)
class Setting:
    key: str
    default: Any
    parse: Callable[[str], Any]
    doc: str = ""


def _from_dataclass(ns: str, cls, docs: dict[str, str] | None = None, skip=()) -> list[Setting]:
    out = []
    for f in fields(cls):
        if f.name in skip:
            continue
        default = f.default if f.default is not MISSING else f.default_factory()
        if isinstance(default, bool):
            parse = _bool
        elif isinstance(default, int):
            parse = int
        elif isinstance(default, float):
            parse = float
        elif isinstance(default, str):
            parse = str
        else:
            parse = _json
            default = json.loads(json.dumps(default))
        out.append(Setting(f"{ns}.{f.name}", default, parse, (docs or {}).get(f.name, "")))
    return out


_NKF = [
    Setting("nkf.epochs", 10, int, "training epochs"),
    Setting("nkf.lr", 1e-5, float, "initial learning rate (cosine annealed)"),
    Setting("nkf.batch_size", 16, int, "tracklet chunks per step"),
    Setting("nkf.optimizer", "sgd", _choice(("sgd", "adam"))),
    Setting("nkf.momentum", 0.9, float, "SGD momentum"),
    Setting("nkf.cap", 64, int, "maximum chunk length in frames"),
    Setting("nkf.hidden", 32, int, "hidden width of R-Net and Q-Net"),
    Setting("nkf.min_iou", 0.5, float, "IoU for pairing detections with ground truth"),
    Setting("nkf.obs_source", "det", _choice(("det", "jitter")),
            "training observations: matched detections or jittered gt"),
    Setting("nkf.jitter_sigma", 1.0, float, "pixel noise of the jitter source"),
]

_REFER = [
    Setting("refer.variant", "cascade", _choice(VARIANTS), "knowledge unification design"),
    Setting("refer.epochs", 100, int),
    Setting("refer.lr", 1e-5, float, "initial learning rate (cosine annealed)"),
    Setting("refer.batch_size", 32, int, "windows per step"),
    Setting("refer.optimizer", "sgd", _choice(("sgd", "adam"))),
    Setting("refer.momentum", 0.9, float),
    Setting("refer.window", 8, int, "frames per window"),
    Setting("refer.stride", 4, int, "window stride"),
    Setting("refer.negatives", 16, int, "negative descriptions per window (-1: all)"),
    Setting("refer.alpha", 0.25, float, "focal loss alpha"),
    Setting("refer.gamma_f", 2.0, float, "focal loss gamma"),
    Setting("refer.c", 32, int, "joint embedding width"),
    Setting("refer.kernels", 4, int, "dynamic kernels of the xcorr design"),
    Setting("refer.heads", 1, int, "attention heads"),
    Setting("refer.gamma0", 10.0, float, "initial logit scale"),
    Setting("refer.freeze_text_head", True, _bool, "keep the text head at its initial weights"),
    Setting("refer.threshold", 0.5, float, "score threshold without calibration"),
    Setting("refer.granularity", "tracklet", _choice(("tracklet", "frame")), "selection unit"),
]

_CALIB = _from_dataclass("calib", CalibrationConfig, {
    "tau": "softmax temperature", "a": "slope on pseudo frequency", "b": "offset",
    "backend": "similarity backend: " + " | ".join(BACKENDS)}) + [
    Setting("calib.threshold", 0.5, float, "score threshold after calibration"),
]

_TRACKER = _from_dataclass("tracker", TrackerConfig, {
    "iou_gate": "minimum IoU for an admissible match",
    "lambda_vel": "weight of the direction cost (VEL)",
    "max_age": "frames a lost track survives",
    "n_init": "hits before confirmation",
    "byte_mode": "second association stage on low-confidence boxes",
    "exit_delete": "drop lost tracks leaving the image (DEL)",
    "interp_max_gap": "longest gap filled by interpolation (INT); < 2 disables",
    "base_q": "process noise scale of the fixed filter",
    "base_r": "measurement noise scale of the fixed filter",
}, skip=("use_nkf",))

_SYNTH = _from_dataclass("synth", ScenarioSpec, skip=("seed",))

SCHEMA: dict[str, Setting] = {s.key: s for s in _TRACKER + _NKF + _REFER + _CALIB + _SYNTH}
NAMESPACES = ("tracker", "nkf", "refer", "calib", "synth")


class RunConfig:
    """Resolved settings: schema defaults, then file lines, then overrides."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: s.default for k, s in SCHEMA.items()}
        self.explicit: set[str] = set()
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            ns = key.split(".", 1)[0]
            hint = "" if ns in NAMESPACES else f" (namespaces: {', '.join(NAMESPACES)})"
            raise ConfigError(f"unknown config key {key!r}{hint}")
        if isinstance(value, str):
            try:
                value = SCHEMA[key].parse(value)
            except (ValueError, json.JSONDecodeError) as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        self.values[key] = value
        self.explicit.add(key)

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, ns: str) -> dict[str, Any]:
        n = len(ns) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(ns + ".")}

    @classmethod
    def from_file(cls, path, overrides: list[str] | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            text = Path(path).read_text(encoding="utf-8")
            for line_no, raw in enumerate(text.splitlines(), start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected key=value")
                k, v = (s.strip() for s in line.split("=", 1))
                try:
                    cfg.set(k, v)
                except ConfigError as exc:
                    raise ConfigError(f"{path}:{line_no}: {exc}") from None
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = (s.strip() for s in item.split("=", 1))
            cfg.set(k, v)
        return cfg

    def tracker(self, use_nkf: bool = False) -> TrackerConfig:
        try:
            return TrackerConfig(**self.section("tracker"), use_nkf=use_nkf)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"tracker settings: {exc}") from None

    def calibration(self) -> CalibrationConfig:
        kw = {k: v for k, v in self.section("calib").items() if k != "threshold"}
        try:
            return CalibrationConfig(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"calib settings: {exc}") from None

    def scenario(self, base: dict | None = None, seed: int | None = None) -> ScenarioSpec:
        """Scenario from ``base`` (a spec file's content); explicitly set ``synth.*`` keys win."""
        d = dict(base or {})
        for k, v in self.section("synth").items():
            if "synth." + k in self.explicit:
                d[k] = v
        if seed is not None:
            d["seed"] = seed
        try:
            spec = ScenarioSpec.from_dict(d)
            spec.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synth settings: {exc}") from None
        return spec

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(self.values.items()))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(v)
    return str(v)


def help_text() -> str:
    """Every setting with its default, grouped by namespace."""
    lines = ["config keys (namespace.key=default):"]
    for ns in NAMESPACES:
        for k, s in SCHEMA.items():
            if k.startswith(ns + "."):
                doc = f"  {s.doc}" if s.doc else ""
                lines.append(f"  {k}={_fmt(s.default)}{doc}")
    return "\n".join(lines)
