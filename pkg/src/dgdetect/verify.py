"""Baseline face verification: cosine comparison and score statistics."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .dataio import Embedding, Label, TrialPair
from .errors import DegenerateEmbeddingError, FeatureError, ReferentialError


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    va, vb = getattr(a, "values", a), getattr(b, "values", b)
    va = np.asarray(va, dtype=np.float64)
    vb = np.asarray(vb, dtype=np.float64)
    if va.shape != vb.shape:
        raise FeatureError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    naa, nbb = float(np.dot(va, va)), float(np.dot(vb, vb))
    if naa == 0.0 or nbb == 0.0:
        raise DegenerateEmbeddingError("cosine similarity of a zero-norm embedding")
    # sqrt(x*x) == x in IEEE arithmetic, so equal vectors give exactly 1
    prod = naa * nbb
    denom = math.sqrt(prod) if 0.0 < prod < math.inf else math.sqrt(naa) * math.sqrt(nbb)
    s = float(np.dot(va, vb)) / denom
    return min(1.0, max(-1.0, s))


def to_display_scale(s):
    """Map a cosine in [-1, 1] onto [0, 1]."""
    return (np.asarray(s, dtype=np.float64) + 1.0) / 2.0


@dataclass
class ScoreSet:
    mated: list[float] = field(default_factory=list)
    nonmated: list[float] = field(default_factory=list)
    attack: list[float] = field(default_factory=list)
    meta: str = ""

    def by_label(self) -> dict[Label, list[float]]:
        return {Label.MATED: self.mated, Label.NONMATED: self.nonmated,
                Label.DOPPELGANGER: self.attack}

    def rows(self):
        """(label, score) in a stable category order."""
        for label, scores in self.by_label().items():
            for s in scores:
                yield label, s


def score_pairs(pairs: Iterable[TrialPair], embeddings: Mapping[str, Embedding],
                meta: str = "") -> ScoreSet:
    out = ScoreSet(meta=meta)
    bins = out.by_label()
    for p in pairs:
        try:
            ref, probe = embeddings[p.reference_id], embeddings[p.probe_id]
        except KeyError as exc:
            raise ReferentialError(f"no embedding for id {exc.args[0]!r}") from None
        bins[p.label].append(cosine_similarity(ref, probe))
    return out


@dataclass(frozen=True)
class DescriptiveStats:
    n: int
    mean: float | None
    std: float | None
    skewness: float | None
    excess_kurtosis: float | None


def descriptive_stats(scores) -> DescriptiveStats:
    """Sample mean, sample std (n-1), adjusted Fisher-Pearson skewness and
    bias-corrected excess kurtosis. Undefined fields are None."""
    x = [float(v) for v in scores]
    n = len(x)
    if n == 0:
        return DescriptiveStats(0, None, None, None, None)
    mean = math.fsum(x) / n
    if n < 2:
        return DescriptiveStats(n, mean, None, None, None)
    d = [v - mean for v in x]
    m2 = math.fsum(v * v for v in d) / n
    std = math.sqrt(m2 * n / (n - 1))
    skew = kurt = None
    if m2 > 0:
        # standardise first so tiny variances cannot underflow the moments
        root = math.sqrt(m2)
        z = [v / root for v in d]
        if n >= 3:
            g1 = math.fsum(v * v * v for v in z) / n
            skew = math.sqrt(n * (n - 1)) / (n - 2) * g1
        if n >= 4:
            g2 = math.fsum(v ** 4 for v in z) / n - 3.0
            kurt = (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6.0)
    return DescriptiveStats(n, mean, std, skew, kurt)
