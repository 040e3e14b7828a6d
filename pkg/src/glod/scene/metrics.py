"""Alignment and infection scores with a pluggable similarity oracle.

Scores lie in [0, 100]. The toy oracle compares every pixel of a region with
a palette of reference colours and reports the posterior mass, averaged over
the region, of the colours the condition names.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from glod.composer import Box
from glod.denoiser.condition import Condition
from glod.errors import InvalidArgumentError, UnknownConditionError

CSV_COLUMNS = ["case_id", "S_g", "S_ls", "S_lo", "S_gl", "S_i", "method", "seed"]
# region rule recorded next to the metrics; see crop()
REGION_RULE = "pixel-centre-in-half-open-box"


class SimilarityOracle(Protocol):
    def score(self, region: np.ndarray, c: Condition) -> float:
        """Similarity in [0, 100] between an ``(h, w, C)`` region and a condition."""


class PaletteOracle:
    """Per-pixel Gaussian class posterior over a colour palette.

    ``score(region, c)`` is 100 times the mean, over the region's pixels, of
    the posterior mass on the palette entries among ``c``'s ids.
    """

    def __init__(self, palette: Mapping[str, np.ndarray], tau: float = 0.15):
        if tau <= 0:
            raise InvalidArgumentError("tau must be positive")
        self.names = list(palette)
        self.colors = np.stack([np.asarray(palette[k], dtype=np.float64) for k in self.names])
        self.tau = tau

    def keys(self, c: Condition) -> list[int]:
        idx = [self.names.index(tok) for tok in c.ids if tok in self.names]
        if not idx:
            raise UnknownConditionError(f"condition {c} names no palette colour")
        return idx

    def posteriors(self, region: np.ndarray) -> np.ndarray:
        px = np.asarray(region, dtype=np.float64).reshape(-1, self.colors.shape[1])
        d2 = ((px[:, None, :] - self.colors[None]) ** 2).sum(-1)
        logits = -d2 / (2.0 * self.tau**2)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def score(self, region, c: Condition) -> float:
        region = np.asarray(region, dtype=np.float64)
        if region.size == 0:
            raise InvalidArgumentError("empty region")
        p = self.posteriors(region)[:, self.keys(c)].sum(axis=1)
        return float(np.clip(100.0 * p.mean(), 0.0, 100.0))


def crop(img: np.ndarray, box: Box) -> np.ndarray:
    img = np.asarray(img)
    rows, cols = box.pixel_slices(img.shape[0], img.shape[1])
    region = img[rows, cols]
    if region.shape[0] == 0 or region.shape[1] == 0:
        raise InvalidArgumentError(f"box {box.as_list()} covers no pixel of a {img.shape[:2]} image")
    return region


@dataclass(frozen=True)
class Scores:
    S_g: float
    S_ls: float
    S_lo: float
    S_gl: float
    S_i: float


def alignment_scores(img, case, oracle: SimilarityOracle) -> tuple[float, float, float, float]:
    """``(S_g, S_ls, S_lo, S_gl)``: whole image against the global condition,
    each object's box against its local condition, and their mean."""
    img = np.asarray(img, dtype=np.float64)
    s_g = oracle.score(img, case.global_condition)
    s_ls = oracle.score(crop(img, case.subject_box), case.subject_condition)
    s_lo = oracle.score(crop(img, case.object_box), case.object_condition)
    return s_g, s_ls, s_lo, (s_g + s_ls + s_lo) / 3.0


def infection_score(img, case, oracle: SimilarityOracle) -> float:
    """Mean cross-similarity: subject region vs object condition and back. Lower is better."""
    img = np.asarray(img, dtype=np.float64)
    a = oracle.score(crop(img, case.subject_box), case.object_condition)
    b = oracle.score(crop(img, case.object_box), case.subject_condition)
    return (a + b) / 2.0


def score_case(img, case, oracle: SimilarityOracle) -> Scores:
    return Scores(*alignment_scores(img, case, oracle), infection_score(img, case, oracle))


def metrics_csv(rows: Sequence[tuple[str, Scores | None, str, int]]) -> str:
    """CSV text with :data:`CSV_COLUMNS`; a ``None`` score leaves the metric cells blank."""
    buf = io.StringIO()
    buf.write(f"# region_rule={REGION_RULE}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for case_id, sc, method, seed in rows:
        vals = ["", "", "", "", ""] if sc is None else [repr(v) for v in (sc.S_g, sc.S_ls, sc.S_lo, sc.S_gl, sc.S_i)]
        w.writerow([case_id, *vals, method, seed])
    return buf.getvalue()
