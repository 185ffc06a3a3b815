"""Train / score / evaluate steps shared by the CLI and the experiment scripts."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from . import metrics, svm
from .dataio import Embedding, Label, TrialPair, check_references
from .errors import DataFormatError, TrainingError
from .features import FeatureConfig, as_matrix, build_feature_set, pair_feature

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSummary:
    n_mated_pairs: int
    n_doppelganger_pairs: int
    n_features: int
    n_support_vectors: int
    A: float
    B: float


def train_detector(pairs: Sequence[TrialPair], embeddings: Mapping[str, Embedding],
                   feature_config: FeatureConfig = FeatureConfig(),
                   svm_config: svm.SvmConfig = svm.SvmConfig(),
                   calibration_fraction: float = 0.2) -> tuple[svm.SvmModel, TrainSummary]:
    check_references(pairs, embeddings)
    n_mated = sum(p.label is Label.MATED for p in pairs)
    n_dopp = sum(p.label is Label.DOPPELGANGER for p in pairs)
    if n_mated == 0 or n_dopp == 0:
        raise TrainingError(f"training needs both classes (mated={n_mated}, "
                            f"doppelganger={n_dopp})")
    feats = build_feature_set(pairs, embeddings, feature_config)
    X, y = as_matrix(feats)
    model = svm.train_calibrated(X, y, svm_config, feature_config, calibration_fraction)
    return model, TrainSummary(n_mated, n_dopp, len(feats), model.n_sv, model.A, model.B)


def score_detector(model: svm.SvmModel, pairs: Sequence[TrialPair],
                   embeddings: Mapping[str, Embedding]) -> np.ndarray:
    """Calibrated detection score per pair, in input order (0 mated, 1 doppelgänger)."""
    check_references(pairs, embeddings, check_subjects=False)
    if not pairs:
        return np.empty(0)
    X = np.stack([pair_feature(embeddings[p.reference_id], embeddings[p.probe_id],
                               model.feature_config).values for p in pairs])
    if X.shape[1] != model.dim:
        raise DataFormatError(f"dimension mismatch: model expects {model.dim}, "
                              f"embeddings have {X.shape[1]}")
    return svm.scores(model, X)


def split_detection_scores(pairs: Sequence[TrialPair], scores) -> tuple[np.ndarray, np.ndarray]:
    """(attack, bona fide) detection scores; nonmated pairs are ignored."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.array([p.label.value for p in pairs])
    return (scores[labels == Label.DOPPELGANGER.value],
            scores[labels == Label.MATED.value])


def detection_d_eer(pairs, scores) -> float:
    attack, bona = split_detection_scores(pairs, scores)
    return metrics.d_eer(attack, bona)[0]
