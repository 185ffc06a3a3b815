"""Verification, vulnerability and attack-detection error rates.

Conventions used throughout:

* similarity scores match when ``score >= t``;
* detection scores flag an attack (doppelgänger) when ``score >= t``, so
  APCER counts attack scores below ``t`` and BPCER counts bona fide scores
  at or above ``t``;
* rates are empirical step functions. Every rate is a ratio of integer
  counts, and operating-point searches compare those counts exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class UnreachableTargetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Threshold:
    value: float
    criterion: str = ""
    achieved: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class DetCurve:
    """Error trade-off sampled at increasing thresholds.

    For detection curves ``error1``/``error2`` are APCER/BPCER: APCER is
    non-decreasing and BPCER non-increasing along the list. For
    verification curves they are FMR/FNMR with the opposite directions.
    """

    thresholds: np.ndarray
    error1: np.ndarray
    error2: np.ndarray
    axes: tuple[str, str] = ("apcer", "bpcer")

    def __len__(self):
        return self.thresholds.size

    def points(self):
        return list(zip(self.thresholds.tolist(), self.error1.tolist(), self.error2.tolist()))


def _scores(x, name="scores") -> np.ndarray:
    a = np.sort(np.asarray(x, dtype=np.float64).ravel())
    if a.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contain non-finite values")
    return a


def _count_ge(sorted_scores: np.ndarray, t):
    return sorted_scores.size - np.searchsorted(sorted_scores, t, side="left")


def _count_lt(sorted_scores: np.ndarray, t):
    return np.searchsorted(sorted_scores, t, side="left")


def above(x: float) -> float:
    """The threshold just above ``x``: rejects every score <= x."""
    return float(np.nextafter(x, math.inf))


def candidate_thresholds(*score_sets, midpoints: bool = True) -> np.ndarray:
    """Observed values, optional midpoints between consecutive distinct values,
    and one threshold above the maximum, sorted and unique."""
    vals = np.unique(np.concatenate([np.asarray(s, dtype=np.float64).ravel() for s in score_sets]))
    parts = [vals]
    if midpoints and vals.size > 1:
        parts.append(vals[:-1] + (vals[1:] - vals[:-1]) / 2)
    parts.append(np.array([above(vals[-1])]))
    return np.unique(np.concatenate(parts))


def fmr(nonmated, t: float) -> float:
    s = _scores(nonmated, "nonmated scores")
    return int(_count_ge(s, t)) / s.size


def fnmr(mated, t: float) -> float:
    s = _scores(mated, "mated scores")
    return int(_count_lt(s, t)) / s.size


def iapmr(attack, t: float) -> float:
    s = _scores(attack, "attack scores")
    return int(_count_ge(s, t)) / s.size


def apcer(attack, t: float) -> float:
    s = _scores(attack, "attack scores")
    return int(_count_lt(s, t)) / s.size


def bpcer(bonafide, t: float) -> float:
    s = _scores(bonafide, "bona fide scores")
    return int(_count_ge(s, t)) / s.size


def _max_count(target: float, n: int) -> int:
    """Largest count k with k / n <= target, compared exactly."""
    return math.floor(Fraction(target) * n)


def threshold_at_fmr(nonmated, target_fmr: float) -> Threshold:
    """Smallest candidate threshold whose FMR does not exceed the target."""
    if not 0 < target_fmr < 1:
        raise ValueError("target FMR must lie in (0, 1)")
    s = _scores(nonmated, "nonmated scores")
    kmax = _max_count(target_fmr, s.size)
    if kmax < 1:
        warnings.warn(f"FMR {target_fmr:g} unreachable with {s.size} nonmated scores; "
                      "threshold placed above the maximum score", UnreachableTargetWarning,
                      stacklevel=2)
    cands = candidate_thresholds(s)
    ok = np.flatnonzero(_count_ge(s, cands) <= kmax)
    t = float(cands[ok[0]])
    return Threshold(t, f"FMR={target_fmr:.4%}", int(_count_ge(s, t)) / s.size)


def _detection_sweep(attack, bonafide):
    a = _scores(attack, "attack scores")
    b = _scores(bonafide, "bona fide scores")
    t = candidate_thresholds(a, b)
    return a, b, t, _count_lt(a, t), _count_ge(b, t)


def d_eer(attack, bonafide) -> tuple[float, Threshold]:
    """Detection EER: the point minimising |APCER - BPCER|, reported as their mean.

    Ties prefer the lower BPCER, then the lower threshold.
    """
    a, b, t, ca, cb = _detection_sweep(attack, bonafide)
    na, nb = a.size, b.size
    # |ca/na - cb/nb| compared as |ca*nb - cb*na| on integers
    gap = np.abs(ca.astype(np.int64) * nb - cb.astype(np.int64) * na)
    best = int(np.lexsort((np.arange(t.size), cb, gap))[0])
    num = int(ca[best]) * nb + int(cb[best]) * na
    value = num / (2 * na * nb)
    return value, Threshold(float(t[best]), "APCER=BPCER", value)


def bpcer_at_apcer(attack, bonafide, apcer_target: float) -> tuple[float, Threshold]:
    """Lowest BPCER over thresholds whose APCER does not exceed the target.

    BPCER10 and BPCER20 are ``apcer_target`` 0.10 and 0.05.
    """
    if not 0 < apcer_target < 1:
        raise ValueError("APCER target must lie in (0, 1)")
    a, b, t, ca, cb = _detection_sweep(attack, bonafide)
    kmax = _max_count(apcer_target, a.size)
    if kmax < 1:
        warnings.warn(f"APCER {apcer_target:g} is below the resolution of {a.size} attack "
                      "scores; reporting the APCER=0 operating point", UnreachableTargetWarning,
                      stacklevel=2)
    ok = np.flatnonzero(ca <= kmax)
    # cb is non-increasing in t, so the largest admissible threshold is optimal;
    # pick the smallest threshold attaining that BPCER
    k_best = ok[np.argmin(cb[ok])]
    value = int(cb[k_best]) / b.size
    return value, Threshold(float(t[k_best]), f"APCER<={apcer_target:.0%}",
                            int(ca[k_best]) / a.size)


def det_curve(attack, bonafide, n_points: int | None = None) -> DetCurve:
    """DET points at every distinct observed score plus one above the maximum."""
    a = _scores(attack, "attack scores")
    b = _scores(bonafide, "bona fide scores")
    t = candidate_thresholds(a, b, midpoints=False)
    if n_points is not None and n_points < t.size:
        if n_points < 2:
            raise ValueError("n_points must be at least 2")
        idx = np.unique(np.round(np.linspace(0, t.size - 1, n_points)).astype(int))
        t = t[idx]
    e1 = _count_lt(a, t) / a.size
    e2 = _count_ge(b, t) / b.size
    return DetCurve(t, e1, e2, ("apcer", "bpcer"))


def verification_curve(mated, nonmated, n_points: int | None = None) -> DetCurve:
    m = _scores(mated, "mated scores")
    nm = _scores(nonmated, "nonmated scores")
    t = candidate_thresholds(m, nm, midpoints=False)
    if n_points is not None and n_points < t.size:
        idx = np.unique(np.round(np.linspace(0, t.size - 1, n_points)).astype(int))
        t = t[idx]
    return DetCurve(t, _count_ge(nm, t) / nm.size, _count_lt(m, t) / m.size, ("fmr", "fnmr"))


@dataclass(frozen=True)
class DetectionSummary:
    d_eer: float
    d_eer_threshold: float
    bpcer10: float
    bpcer20: float
    n_attack: int
    n_bonafide: int


def detection_summary(attack, bonafide) -> DetectionSummary:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        eer, thr = d_eer(attack, bonafide)
        b10, _ = bpcer_at_apcer(attack, bonafide, 0.10)
        b20, _ = bpcer_at_apcer(attack, bonafide, 0.05)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    return DetectionSummary(eer, thr.value, b10, b20,
                            len(np.ravel(attack)), len(np.ravel(bonafide)))


@dataclass(frozen=True)
class VulnerabilityRow:
    target_fmr: float
    threshold: float
    achieved_fmr: float
    fnmr: float
    iapmr: float


def vulnerability_table(mated, nonmated, attack,
                        fmr_targets=(0.01, 0.001, 0.0001)) -> list[VulnerabilityRow]:
    """FNMR and IAPMR at thresholds fixed by target FMRs."""
    rows = []
    for target in fmr_targets:
        thr = threshold_at_fmr(nonmated, target)
        rows.append(VulnerabilityRow(target, thr.value, thr.achieved,
                                     fnmr(mated, thr.value), iapmr(attack, thr.value)))
    return rows
