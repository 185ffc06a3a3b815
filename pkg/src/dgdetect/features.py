"""Difference-vector features built from (reference, probe) embedding pairs."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np

from .dataio import Embedding, Label, TrialPair
from .errors import DegenerateEmbeddingError, FeatureError, ReferentialError

SIGNED = "signed"
ABSOLUTE = "absolute"


@dataclass(frozen=True)
class FeatureConfig:
    mode: str = SIGNED
    normalize: bool = True
    symmetrize: bool = True

    def __post_init__(self):
        if self.mode not in (SIGNED, ABSOLUTE):
            raise FeatureError(f"unknown difference mode {self.mode!r}")

    def encode(self) -> str:
        return f"{self.mode},{int(self.normalize)},{int(self.symmetrize)}"

    @classmethod
    def decode(cls, text: str) -> "FeatureConfig":
        try:
            mode, norm, sym = text.split(",")
            return cls(mode, bool(int(norm)), bool(int(sym)))
        except ValueError:
            raise FeatureError(f"bad feature config {text!r}") from None


@dataclass(frozen=True, eq=False)
class DifferenceVector:
    values: np.ndarray
    reference_id: str = ""
    probe_id: str = ""
    label: Label | None = None

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def normalize(e: Embedding) -> Embedding:
    norm = np.linalg.norm(e.values)
    if norm == 0.0:
        raise DegenerateEmbeddingError(f"embedding {e.image_id!r} has zero norm")
    return Embedding(e.image_id, e.subject_id, e.values / norm)


def difference(reference: Embedding, probe: Embedding, mode: str = SIGNED) -> DifferenceVector:
    if reference.dim != probe.dim:
        raise FeatureError(
            f"dimension mismatch: {reference.image_id!r} has {reference.dim}, "
            f"{probe.image_id!r} has {probe.dim}")
    d = reference.values - probe.values
    if mode == ABSOLUTE:
        d = np.abs(d)
    elif mode != SIGNED:
        raise FeatureError(f"unknown difference mode {mode!r}")
    d.setflags(write=False)
    return DifferenceVector(d, reference.image_id, probe.image_id)


def pair_feature(ref: Embedding, probe: Embedding, config: FeatureConfig,
                 label: Label | None = None) -> DifferenceVector:
    if config.normalize:
        ref, probe = normalize(ref), normalize(probe)
    f = difference(ref, probe, config.mode)
    return DifferenceVector(f.values, f.reference_id, f.probe_id, label)


def build_feature_set(pairs: Iterable[TrialPair], embeddings: Mapping[str, Embedding],
                      config: FeatureConfig = FeatureConfig(),
                      symmetrize: bool | None = None) -> list[DifferenceVector]:
    """One feature per mated/doppelgänger pair, in input order.

    Nonmated pairs are skipped. With symmetrization each pair is followed by
    its swapped-order feature. ``symmetrize`` overrides the config flag
    (scoring never duplicates).
    """
    sym = config.symmetrize if symmetrize is None else symmetrize
    out = []
    for p in pairs:
        if p.label is Label.NONMATED:
            continue
        try:
            ref, probe = embeddings[p.reference_id], embeddings[p.probe_id]
        except KeyError as exc:
            raise ReferentialError(f"no embedding for id {exc.args[0]!r}") from None
        out.append(pair_feature(ref, probe, config, p.label))
        if sym:
            out.append(pair_feature(probe, ref, config, p.label))
    return out


def as_matrix(features: Iterable[DifferenceVector]) -> tuple[np.ndarray, np.ndarray]:
    """Stack features into X and labels into y (+1 doppelgänger, -1 mated)."""
    features = list(features)
    if not features:
        return np.empty((0, 0)), np.empty(0)
    X = np.stack([f.values for f in features]).astype(np.float64)
    y = np.array([1.0 if f.label is Label.DOPPELGANGER else -1.0 for f in features])
    return X, y
