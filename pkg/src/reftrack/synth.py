"""Seeded synthetic scenes: trajectories, detections, features and descriptions.

A scene is a set of objects with a color, a motion state and a location
side. Detections are noisy copies of the ground truth plus clutter. Visual
features encode the attributes through fixed seeded codes; descriptions are
attribute templates ("moving red object in the left") whose text features
come from the frozen word encoder. Everything is a pure function of the
:class:`ScenarioSpec`, seed included.

Attribute predicates (re-checkable from geometry alone):

* ``left``  iff box center x < width / 2, ``right`` otherwise;
* ``moving`` iff the per-frame center displacement exceeds
  :data:`MOVING_SPEED` pixels, ``parked`` otherwise.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (BBox, DescriptionRecord, Detection, Tracklet, iou, write_descriptions,
                   write_mot)

MOVING_SPEED = 0.5

COLORS = (
    "red", "blue", "white", "black", "green", "yellow", "silver", "orange", "purple", "brown",
    "pink", "gray", "cyan", "maroon", "navy", "olive", "teal", "beige", "gold", "ivory",
    "coral", "crimson", "indigo", "khaki", "lavender", "lime", "magenta", "mint", "ochre",
    "peach", "plum", "rust", "salmon", "sand", "scarlet", "sepia", "sienna", "tan", "turquoise",
    "violet", "amber", "azure", "bronze", "charcoal", "cobalt", "copper", "cream", "denim",
    "emerald", "fuchsia", "jade", "lemon", "lilac", "mauve", "mustard", "pearl", "ruby",
    "sapphire", "slate", "taupe", "umber", "vermilion", "wine", "zinc",
)
MOTIONS = ("moving", "parked")
SIDES = ("left", "right")


class SpecError(ValueError):
    """The scenario cannot be generated as requested."""


@dataclass
class ScenarioSpec:
    n_objects: int = 20
    n_frames: int = 100
    width: int = 1280
    height: int = 720
    motion: str = "linear"            # linear | dance
    det_sigma: float = 1.0            # pixels, on x, y, w, h
    miss_rate: float = 0.05
    fp_rate: float = 0.02             # expected clutter boxes per visible object per frame
    noise_regimes: list = field(default_factory=lambda: [[0.0, 1.0]])  # [start fraction, sigma factor]
    noise_scales_with_height: bool = False
    h_ref: float = 100.0
    height_range: tuple = (40.0, 160.0)
    aspect_range: tuple = (0.4, 0.7)
    speed_range: tuple = (1.0, 4.0)
    parked_fraction: float = 0.25
    dance_segment: tuple = (20, 40)
    late_births: bool = True
    # referring
    referring: bool = False
    n_colors: int = 8
    freq_exponent: float = 1.0        # power law over color ranks
    templates: str = "compositional"  # compositional | color
    c_v: int = 64
    c_t: int = 32
    s_g: int = 16
    s_l: int = 4
    feature_noise: float = 0.3
    code_seed: int = 0
    seed: int = 0

    def validate(self) -> None:
        for name in ("miss_rate", "fp_rate", "parked_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecError(f"{name} must lie in [0, 1], got {v}")
        if self.n_frames < 2:
            raise SpecError("n_frames must be >= 2")
        if self.n_objects < 0:
            raise SpecError("n_objects must be >= 0")
        if self.motion not in ("linear", "dance"):
            raise SpecError(f"unknown motion {self.motion!r}")
        if self.referring and self.miss_rate >= 1.0 and self.n_objects > 0:
            raise SpecError("miss rate 1 leaves nothing to refer to")
        if self.referring and not 1 <= self.n_colors <= len(COLORS):
            raise SpecError(f"n_colors must lie in [1, {len(COLORS)}]")
        if self.s_l < 3 and self.referring:
            raise SpecError("local feature maps need at least 3 positions")
        if self.det_sigma < 0:
            raise SpecError("det_sigma must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown scenario keys: {sorted(unknown)}")
        spec = cls(**d)
        for k in ("height_range", "aspect_range", "speed_range", "dance_segment"):
            setattr(spec, k, tuple(getattr(spec, k)))
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ObjectTrack:
    obj_id: int
    color: int
    frames: np.ndarray        # [n] frame numbers, consecutive
    centers: np.ndarray       # [n, 2]
    sizes: np.ndarray         # [n, 2] (w, h)
    speeds: np.ndarray        # [n] pixel displacement from previous frame (first copies second)

    def box(self, i: int) -> BBox:
        (cx, cy), (w, h) = self.centers[i], self.sizes[i]
        return BBox(cx - w / 2, cy - h / 2, w, h)

    def tracklet(self) -> Tracklet:
        return Tracklet(self.obj_id, tuple((int(f), self.box(i)) for i, f in enumerate(self.frames)))


@dataclass
class World:
    spec: ScenarioSpec
    objects: list[ObjectTrack]
    detections: list[Detection]
    det_source: list[int]                     # gt id per detection, 0 for clutter
    sigma_per_frame: np.ndarray               # [n_frames] regime factor

    def gt_tracklets(self) -> list[Tracklet]:
        return [o.tracklet() for o in self.objects]

    def attributes(self, obj: ObjectTrack, i: int) -> dict:
        cx = obj.centers[i, 0]
        return {
            "color": COLORS[obj.color],
            "motion": "moving" if obj.speeds[i] > MOVING_SPEED else "parked",
            "side": "left" if cx < self.spec.width / 2 else "right",
        }


# ---------------------------------------------------------------- geometry

def _regime_factor(spec: ScenarioSpec) -> np.ndarray:
    regimes = sorted((float(a), float(b)) for a, b in spec.noise_regimes)
    out = np.ones(spec.n_frames)
    for k in range(spec.n_frames):
        frac = k / spec.n_frames
        for start, factor in regimes:
            if frac >= start:
                out[k] = factor
    return out


def _power_law_probs(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** (-exponent)
    return w / w.sum()


def _sample_object(spec: ScenarioSpec, rng: np.random.Generator, obj_id: int,
                   color_probs: np.ndarray | None) -> ObjectTrack | None:
    W, H = spec.width, spec.height
    lo, hi = spec.height_range
    h = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    w = h * float(rng.uniform(*spec.aspect_range))
    color = int(rng.choice(len(color_probs), p=color_probs)) if color_probs is not None else 0
    parked = rng.random() < spec.parked_fraction
    start = 1
    if spec.late_births and spec.motion == "linear":
        start = int(rng.integers(1, max(2, spec.n_frames // 3) + 1))
    margin = 0.6 * max(w, h)
    c = np.array([rng.uniform(margin, W - margin), rng.uniform(margin, H - margin)])

    def new_velocity():
        if parked:
            return np.zeros(2)
        speed = rng.uniform(*spec.speed_range)
        ang = rng.uniform(0, 2 * math.pi)
        return speed * np.array([math.cos(ang), math.sin(ang)])

    v = new_velocity()
    next_switch = int(rng.integers(spec.dance_segment[0], spec.dance_segment[1] + 1))
    centers = [c.copy()]
    frames = [start]
    for f in range(start + 1, spec.n_frames + 1):
        if spec.motion == "dance" and not parked:
            next_switch -= 1
            if next_switch <= 0:
                v = new_velocity()
                next_switch = int(rng.integers(spec.dance_segment[0], spec.dance_segment[1] + 1))
            nc = c + v
            # dancers stay on stage: reflect at the borders
            for d, lim in ((0, W), (1, H)):
                if not (margin <= nc[d] <= lim - margin):
                    v[d] = -v[d]
                    nc[d] = c[d] + v[d]
            c = nc
        else:
            c = c + v
            if not (0 <= c[0] < W and 0 <= c[1] < H):
                break
        centers.append(c.copy())
        frames.append(f)
    centers = np.array(centers)
    disp = np.linalg.norm(np.diff(centers, axis=0), axis=1) if len(centers) > 1 else np.zeros(0)
    speeds = np.concatenate([disp[:1] if len(disp) else [0.0], disp])
    sizes = np.tile([w, h], (len(centers), 1))
    return ObjectTrack(obj_id, color, np.array(frames), centers, sizes, speeds)


def _detections(spec: ScenarioSpec, rng: np.random.Generator, objects: list[ObjectTrack],
                factor: np.ndarray) -> tuple[list[Detection], list[int]]:
    by_frame: dict[int, list[tuple[BBox, int, float]]] = {}
    for o in objects:
        for i, f in enumerate(o.frames):
            by_frame.setdefault(int(f), []).append((o.box(i), o.obj_id, o.sizes[i, 1]))
    dets, src = [], []
    lo, hi = spec.height_range
    for f in range(1, spec.n_frames + 1):
        visible = by_frame.get(f, [])
        frame_dets = []
        for box, oid, h in visible:
            if rng.random() < spec.miss_rate:
                continue
            sigma = spec.det_sigma * factor[f - 1]
            if spec.noise_scales_with_height:
                sigma *= h / spec.h_ref
            if sigma > 0:
                n = rng.normal(0.0, sigma, size=4)
                x, y = box.x_left + n[0], box.y_top + n[1]
                bw, bh = max(2.0, box.width + n[2]), max(2.0, box.height + n[3])
                box = BBox(float(x), float(y), float(bw), float(bh))
            conf = float(rng.uniform(0.65, 1.0))
            frame_dets.append((Detection(f, box, conf, 1, -1, 1.0), oid))
        n_fp = int(rng.poisson(spec.fp_rate * len(visible))) if visible else 0
        for _ in range(n_fp):
            h = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
            w = h * float(rng.uniform(*spec.aspect_range))
            x = float(rng.uniform(0, spec.width - w))
            y = float(rng.uniform(0, spec.height - h))
            frame_dets.append((Detection(f, BBox(x, y, w, h), float(rng.uniform(0.1, 0.9)), 1, -1, 1.0), 0))
        order = rng.permutation(len(frame_dets))
        for k in order:
            d, oid = frame_dets[k]
            dets.append(d)
            src.append(oid)
    return dets, src


def generate_world(spec: ScenarioSpec) -> World:
    """Trajectories and detections for one sequence."""
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0])
    color_probs = _power_law_probs(spec.n_colors, spec.freq_exponent) if spec.referring else None
    objects = []
    for k in range(spec.n_objects):
        o = _sample_object(spec, rng, k + 1, color_probs)
        if o is not None:
            objects.append(o)
    factor = _regime_factor(spec)
    dets, src = _detections(spec, rng, objects, factor)
    return World(spec, objects, dets, src, factor)


# ---------------------------------------------------------------- descriptions

def _templates(spec: ScenarioSpec) -> list[tuple[dict, str]]:
    """(constraint, sentence) pairs; constraints map attribute -> value."""
    colors = COLORS[:spec.n_colors]
    out: list[tuple[dict, str]] = []
    if spec.templates == "color":
        return [({"color": c}, f"{c} object") for c in colors]
    for c in colors:
        out.append(({"color": c}, f"{c} object"))
    for m in MOTIONS:
        out.append(({"motion": m}, f"{m} object"))
    for s in SIDES:
        out.append(({"side": s}, f"object in the {s}"))
    for m, c in itertools.product(MOTIONS, colors):
        out.append(({"motion": m, "color": c}, f"{m} {c} object"))
    for c, s in itertools.product(colors, SIDES):
        out.append(({"color": c, "side": s}, f"{c} object in the {s}"))
    for m, s in itertools.product(MOTIONS, SIDES):
        out.append(({"motion": m, "side": s}, f"{m} object in the {s}"))
    for m, c, s in itertools.product(MOTIONS, colors, SIDES):
        out.append(({"motion": m, "color": c, "side": s}, f"{m} {c} object in the {s}"))
    return out


def catalog(spec: ScenarioSpec) -> list[tuple[int, dict, str]]:
    return [(i + 1, cons, text) for i, (cons, text) in enumerate(_templates(spec))]


def reword(text: str) -> str:
    """Alternative phrasing with the same tokens ("moving red object" -> "red moving object")."""
    words = text.split()
    if len(words) >= 3 and words[0] in MOTIONS and words[1] in COLORS:
        words[0], words[1] = words[1], words[0]
    return " ".join(words)


def label_positives(world: World, constraint: dict) -> dict[int, frozenset[int]]:
    pos: dict[int, set[int]] = {}
    for o in world.objects:
        for i, f in enumerate(o.frames):
            attrs = world.attributes(o, i)
            if all(attrs[k] == v for k, v in constraint.items()):
                pos.setdefault(int(f), set()).add(o.obj_id)
    return {f: frozenset(v) for f, v in sorted(pos.items())}


def describe(world: World, with_frequency: bool) -> list[DescriptionRecord]:
    """Descriptions with at least one positive in ``world``.

    Training frequency of a description = its share of all positive
    (description, object, frame) annotations, so frequencies sum to one.
    """
    rows = []
    for did, cons, text in catalog(world.spec):
        pos = label_positives(world, cons)
        n = sum(len(v) for v in pos.values())
        if n:
            rows.append((did, text, pos, n))
    total = sum(r[3] for r in rows)
    return [DescriptionRecord(did, text, (n / total) if with_frequency else None, pos)
            for did, text, pos, n in rows]


# ---------------------------------------------------------------- features

def _code(rng: np.random.Generator, shape) -> np.ndarray:
    """Random directions with unit RMS per channel (norm sqrt(dim))."""
    v = rng.normal(size=shape)
    return v * (math.sqrt(shape[-1]) / np.linalg.norm(v, axis=-1, keepdims=True))


@dataclass
class FeatureCodes:
    """Fixed seeded codes mapping attribute values to visual channels."""

    color: np.ndarray   # [n_colors, c_v]
    motion: np.ndarray  # [2, c_v]
    side: np.ndarray    # [2, c_v]
    scene: np.ndarray   # [s_g, c_v]

    @classmethod
    def build(cls, spec: ScenarioSpec) -> "FeatureCodes":
        rng = np.random.default_rng([spec.code_seed, 7])
        return cls(_code(rng, (len(COLORS), spec.c_v)), _code(rng, (2, spec.c_v)),
                   _code(rng, (2, spec.c_v)), 0.5 * _code(rng, (spec.s_g, spec.c_v)))


def _item_rng(spec: ScenarioSpec, *key: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, 11, *key])


def local_feature(spec: ScenarioSpec, codes: FeatureCodes, attrs: dict | None,
                  identity: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``[s_l, c_v]``: color, motion and side codes at positions 0..2, identity after."""
    out = np.zeros((spec.s_l, spec.c_v))
    if attrs is not None:
        out[0] = codes.color[COLORS.index(attrs["color"])]
        out[1] = codes.motion[MOTIONS.index(attrs["motion"])]
        out[2] = codes.side[SIDES.index(attrs["side"])]
    out[3:] = identity
    return out + rng.normal(0.0, spec.feature_noise, size=out.shape)


def global_feature(spec: ScenarioSpec, codes: FeatureCodes, world: World, frame: int) -> np.ndarray:
    """``[s_g, c_v]`` scene map: background plus object colors at their grid cells."""
    grid = int(round(math.sqrt(spec.s_g)))
    out = codes.scene.copy()
    for o in world.objects:
        idx = np.nonzero(o.frames == frame)[0]
        if not len(idx):
            continue
        cx, cy = o.centers[idx[0]]
        gx = min(grid - 1, max(0, int(cx / spec.width * grid)))
        gy = min(grid - 1, max(0, int(cy / spec.height * grid)))
        cell = min(spec.s_g - 1, gy * grid + gx)
        out[cell] += 0.5 * codes.color[o.color]
    rng = _item_rng(spec, 1, frame)
    return out + rng.normal(0.0, spec.feature_noise, size=out.shape)


def _identity(spec: ScenarioSpec, key: int) -> np.ndarray:
    return 0.5 * _code(_item_rng(spec, 2, key), (spec.c_v,))


def render_features(world: World, tracklets: list[Tracklet], min_iou: float = 0.5):
    """Emulated backbone: features for arbitrary boxes.

    A box takes the attributes of the ground-truth object it overlaps most
    (IoU >= ``min_iou``); otherwise its crop is background. Noise is seeded
    by (frame, track id), so outputs are deterministic.

    Returns ``(local, global)`` dicts keyed by ``(frame, track_id)`` / frame.
    """
    spec = world.spec
    codes = FeatureCodes.build(spec)
    at_frame: dict[int, list[tuple[ObjectTrack, int]]] = {}
    for o in world.objects:
        for i, f in enumerate(o.frames):
            at_frame.setdefault(int(f), []).append((o, i))
    local, glob = {}, {}
    for t in tracklets:
        for f, box in t.entries:
            best, best_iou = None, min_iou
            for o, i in at_frame.get(f, []):
                v = iou(box, o.box(i))
                if v >= best_iou:
                    best, best_iou = (o, i), v
            rng = _item_rng(spec, 3, f, t.track_id)
            if best is None:
                feat = local_feature(spec, codes, None, _identity(spec, 10_000 + t.track_id), rng)
            else:
                o, i = best
                feat = local_feature(spec, codes, world.attributes(o, i), _identity(spec, o.obj_id), rng)
            local[(f, t.track_id)] = feat
            if f not in glob:
                glob[f] = global_feature(spec, codes, world, f)
    return local, glob


# ---------------------------------------------------------------- regime noise

@dataclass
class RegimeTracks:
    world: World
    regimes: dict[int, np.ndarray]  # obj id -> sigma factor per tracklet frame


def regime_noise_track(spec: ScenarioSpec) -> RegimeTracks:
    """Tracks whose observation noise follows ``spec.noise_regimes`` over time.

    Clutter and misses are switched off so every frame has its own paired
    observation; the per-frame regime factor is recorded per object.
    """
    spec = ScenarioSpec.from_dict({**spec.to_dict(), "miss_rate": 0.0, "fp_rate": 0.0})
    world = generate_world(spec)
    regimes = {o.obj_id: world.sigma_per_frame[o.frames - 1] for o in world.objects}
    return RegimeTracks(world, regimes)


def world_series(world: World):
    """Per-object ``TrackSeries`` pairing gt with the detections it produced."""
    from .kalman import TrackSeries

    obs: dict[tuple[int, int], np.ndarray] = {}
    for d, oid in zip(world.detections, world.det_source):
        if oid:
            obs[(d.frame, oid)] = d.bbox.to_xyah()
    out = []
    for o in world.objects:
        gt = np.array([o.box(i).to_xyah() for i in range(len(o.frames))])
        z = np.array([obs.get((int(f), o.obj_id), gt[i]) for i, f in enumerate(o.frames)])
        seen = np.array([(int(f), o.obj_id) in obs for f in o.frames])
        if len(gt) >= 2 and seen[0]:
            out.append(TrackSeries(gt, z, seen))
    return out


# ---------------------------------------------------------------- files

def text_encoder(spec: ScenarioSpec):
    from .refer.text import TextEncoder

    return TextEncoder(spec.c_t, spec.code_seed)


def write_features(path, local: dict, glob: dict, text: dict | None = None) -> None:
    from .refer.features import FeatureRecord, write_feature_file

    recs = [FeatureRecord(f, 0, "global", arr) for f, arr in sorted(glob.items())]
    recs += [FeatureRecord(f, tid, "local", arr) for (f, tid), arr in sorted(local.items())]
    if text:
        recs += [FeatureRecord(0, did, "text", arr) for did, arr in sorted(text.items())]
    write_feature_file(recs, path)


def write_split(world: World, out_dir, with_frequency: bool, reworded: bool = False) -> list[DescriptionRecord]:
    """gt.txt, dets.txt, features.jsonl and descriptions.json for one sequence."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gt = world.gt_tracklets()
    write_mot(gt, out_dir / "gt.txt")
    write_mot(world.detections, out_dir / "dets.txt")
    descs: list[DescriptionRecord] = []
    if world.spec.referring:
        descs = describe(world, with_frequency)
        if reworded:
            descs = [DescriptionRecord(d.desc_id, reword(d.sentence), d.train_frequency, d.positives)
                     for d in descs]
        write_descriptions(descs, out_dir / "descriptions.json")
        local, glob = render_features(world, gt)
        enc = text_encoder(world.spec)
        text = {d.desc_id: enc.encode(d.text) for d in descs}
        write_features(out_dir / "features.jsonl", local, glob, text)
    return descs


def generate(spec: ScenarioSpec, out_dir) -> dict:
    """Write a train split and a test split (seed + 1) under ``out_dir``.

    Train descriptions carry frequencies; test descriptions do not, and some
    test sentences are reworded so that the description set is open.
    """
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = generate_world(spec)
    test_spec = ScenarioSpec.from_dict({**spec.to_dict(), "seed": spec.seed + 1})
    test = generate_world(test_spec)
    write_split(train, out_dir / "train", with_frequency=True)
    write_split(test, out_dir / "test", with_frequency=False, reworded=True)
    (out_dir / "scenario.json").write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    return {"train": train, "test": test}


def load_world(scenario_dir, split: str) -> World:
    """Rebuild a split's world from the scenario file (generation is deterministic)."""
    spec = ScenarioSpec.from_dict(json.loads((Path(scenario_dir) / "scenario.json").read_text()))
    if split == "test":
        spec = ScenarioSpec.from_dict({**spec.to_dict(), "seed": spec.seed + 1})
    return generate_world(spec)


def tree_digest(root) -> str:
    """SHA-256 over every file under ``root`` (path + bytes), for determinism checks."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()



# ---------------------------------------------------------------- one-to-many set

ONE_TO_MANY_TYPES = ("X", "Y", "Z", "W")


def one_to_many(n_concepts: int = 4, tracks_per_type: int = 8, T: int = 8, c_v: int = 32, c_t: int = 16,
                s_g: int = 8, s_l: int = 4, noise: float = 0.1, identity: float = 0.2, seed: int = 0):
    """Referring pairs where one tracklet matches two orthogonal descriptions.

    Concept ``k`` owns words ``a_k``, ``b_k`` with orthogonal token features
    and three descriptions: ``A_k = [a_k]``, ``B_k = [b_k]``, ``AB_k = [a_k, b_k]``.
    A tracklet shows attribute ``a`` on or off in local slot 0 (codes on the
    first half of the channels) and ``b`` on or off in slot 1 (second half).
    Track types per concept: X (a and b on: positive for A and B, negative
    for AB), Y (both off: AB only), Z (a only: A), W (b only: B). A single
    text-independent visual embedding cannot rank both X and Y correctly,
    because AB's feature lies between A's and B's.

    Each tracklet is one window; slots from 2 on carry a per-tracklet
    ``identity`` code and all maps get Gaussian ``noise``. Returns
    ``(train, test)`` :class:`PairBatch` sets over all (window, description)
    pairs; the two share codes but not noise or identities.
    """
    from .refer.model import PairBatch

    if 2 * n_concepts > c_t:
        raise SpecError("need 2 * n_concepts <= c_t for orthogonal words")
    if s_l < 3 or c_v < 2:
        raise SpecError("need s_l >= 3 and c_v >= 2")
    rng = np.random.default_rng([seed, 21])
    basis = np.linalg.qr(rng.normal(size=(c_t, c_t)))[0][:, :2 * n_concepts].T * math.sqrt(c_t)
    text = []
    for k in range(n_concepts):
        a, b = basis[2 * k], basis[2 * k + 1]
        text += [a, b, (a + b) / 2]          # token means of A, B, AB
    text = np.array(text)
    half = c_v // 2
    # [concept, off/on, C_v]
    codes_a = np.zeros((n_concepts, 2, c_v))
    codes_b = np.zeros((n_concepts, 2, c_v))
    codes_a[..., :half] = _code(rng, (n_concepts, 2, half)) * math.sqrt(c_v / half)
    codes_b[..., half:] = _code(rng, (n_concepts, 2, c_v - half)) * math.sqrt(c_v / (c_v - half))
    scene = 0.5 * _code(rng, (s_g, c_v))
    attrs = {"X": (1, 1), "Y": (0, 0), "Z": (1, 0), "W": (0, 1)}
    positives = {"X": (0, 1), "Y": (2,), "Z": (0,), "W": (1,)}

    def split(split_seed: int) -> PairBatch:
        r = np.random.default_rng([seed, 22, split_seed])
        glob, loc, vis, txt, lab = [], [], [], [], []
        w = 0
        for k in range(n_concepts):
            for name in ONE_TO_MANY_TYPES:
                on_a, on_b = attrs[name]
                for _ in range(tracks_per_type):
                    l = np.zeros((T, s_l, c_v))
                    l[:, 0] = codes_a[k, on_a]
                    l[:, 1] = codes_b[k, on_b]
                    l[:, 2:] = identity * _code(r, (c_v,))
                    loc.append(l + r.normal(0.0, noise, size=l.shape))
                    glob.append(scene + r.normal(0.0, noise, size=(T, s_g, c_v)))
                    pos = {3 * k + j for j in positives[name]}
                    for d in range(3 * n_concepts):
                        vis.append(w)
                        txt.append(d)
                        lab.append(float(d in pos))
                    w += 1
        return PairBatch(np.array(glob), np.array(loc), text, np.array(vis), np.array(txt), np.array(lab))

    return split(0), split(1)
