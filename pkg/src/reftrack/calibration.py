"""Test-time score calibration from pseudo description frequencies.

A test description borrows the training frequencies of textually similar
training descriptions, weighted by a sharp softmax over similarity. The
score then moves by ``a * p + b``, which lifts common descriptions and
pushes rare ones down.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import DescriptionRecord, ScoreTable
from .refer.text import TextEncoder, tokenize

BACKENDS = ("feature_cosine", "lexical_jaccard")


class MissingFrequencyError(ValueError):
    """A training description has no frequency to borrow from."""


@dataclass
class CalibrationConfig:
    tau: float = 100.0
    a: float = 8.0
    b: float = -0.1
    backend: str = "feature_cosine"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown similarity backend {self.backend!r}")
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise ValueError("a and b must be finite")


def _words(d) -> tuple[str, ...]:
    words = tokenize(d.text if isinstance(d, DescriptionRecord) else d)
    if not words:
        raise ValueError("text similarity needs non-empty text")
    return words


def text_similarity(e1, e2, backend: str = "feature_cosine", encoder: TextEncoder | None = None) -> float:
    """Similarity in ``[0, 1]`` of two descriptions (records or raw text).

    ``feature_cosine`` maps the cosine of the pooled text features to
    ``(1 + cos) / 2``; ``lexical_jaccard`` is the token-set Jaccard index.
    """
    w1, w2 = _words(e1), _words(e2)
    if backend == "lexical_jaccard":
        s1, s2 = set(w1), set(w2)
        return len(s1 & s2) / len(s1 | s2)
    if backend != "feature_cosine":
        raise ValueError(f"unknown similarity backend {backend!r}")
    enc = encoder or TextEncoder()
    v1, v2 = enc.pooled(w1), enc.pooled(w2)
    n = np.linalg.norm(v1) * np.linalg.norm(v2)
    cos = float(v1 @ v2 / n) if n > 0 else 0.0
    return float(np.clip((1.0 + cos) / 2.0, 0.0, 1.0))


def softmax_weights(similarities: Sequence[float], tau: float = 100.0) -> np.ndarray:
    """``exp(tau * x_i) / sum_k exp(tau * x_k)``, evaluated in log space."""
    x = np.asarray(similarities, dtype=float)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("need a non-empty vector of similarities")
    z = tau * x
    return np.exp(z - logsumexp(z))


def _train_frequencies(train_descs: Sequence[DescriptionRecord]) -> np.ndarray:
    if not train_descs:
        raise MissingFrequencyError("no training descriptions")
    freqs = []
    for d in train_descs:
        if d.train_frequency is None:
            raise MissingFrequencyError(f"training description {d.desc_id} has no frequency")
        freqs.append(d.train_frequency)
    return np.array(freqs, dtype=float)


def pseudo_frequency(test_desc, train_descs: Sequence[DescriptionRecord], cfg: CalibrationConfig | None = None,
                     encoder: TextEncoder | None = None) -> float:
    """Similarity-weighted mean of the training frequencies."""
    cfg = cfg or CalibrationConfig()
    freqs = _train_frequencies(train_descs)
    sims = [text_similarity(test_desc, d, cfg.backend, encoder) for d in train_descs]
    w = softmax_weights(sims, cfg.tau)
    # a convex combination cannot leave the range of its inputs
    return float(np.clip(w @ freqs, freqs.min(), freqs.max()))


def calibrate(s, p, cfg: CalibrationConfig | None = None):
    """``s + a * p + b``; no clamping, scores may leave [0, 1]."""
    cfg = cfg or CalibrationConfig()
    return s + (cfg.a * p + cfg.b)


def pseudo_frequencies(test_descs: Sequence[DescriptionRecord], train_descs: Sequence[DescriptionRecord],
                       cfg: CalibrationConfig | None = None,
                       encoder: TextEncoder | None = None) -> dict[int, float]:
    """One pseudo frequency per test description id."""
    return {d.desc_id: pseudo_frequency(d, train_descs, cfg, encoder) for d in test_descs}


def calibrate_table(table: ScoreTable, test_descs: Sequence[DescriptionRecord],
                    train_descs: Sequence[DescriptionRecord], cfg: CalibrationConfig | None = None,
                    encoder: TextEncoder | None = None) -> tuple[ScoreTable, dict[int, float]]:
    """Shift every window score of each row by its description's correction.

    Rows whose description is missing from ``test_descs`` raise ``KeyError``.
    With ``a == b == 0`` the table is returned unchanged.
    """
    cfg = cfg or CalibrationConfig()
    freqs = pseudo_frequencies(test_descs, train_descs, cfg, encoder)
    if cfg.a == 0 and cfg.b == 0:
        return ScoreTable(list(table.rows)), freqs
    rows = []
    for r in table.rows:
        if r.desc_id not in freqs:
            raise KeyError(f"score row refers to unknown description {r.desc_id}")
        rows.append(r.shifted(calibrate(0.0, freqs[r.desc_id], cfg)))
    return ScoreTable(rows), freqs
