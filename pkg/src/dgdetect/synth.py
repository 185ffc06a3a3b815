"""Synthetic embedding populations for desk-scale runs of the full pipeline.

Subjects are unit centroids drawn uniformly on the sphere. A sample of a
subject is the centroid plus isotropic Gaussian noise, renormalised.
Lookalike subjects come in pairs whose centroids sit a fixed angle apart.
Morph-style training embeddings renormalise a convex combination of two
centroids, the embedding-space counterpart of an image morph.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataio import Embedding, Label, TrialPair


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    dim: int = 128
    n_subjects: int = 200
    samples_per_subject: int = 4
    n_pairings: int = 100
    angle_deg: float = 51.0
    mated_noise: float = 0.5
    n_train_subjects: int = 200
    n_train_mated: int = 400
    n_train_morphs: int = 400
    morph_weight: float = 0.5
    n_nonmated: int = 5000

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.n_subjects < 2 or self.samples_per_subject < 2:
            raise ValueError("need at least 2 subjects with at least 2 samples each")
        if 2 * self.n_pairings > self.n_subjects:
            raise ValueError("n_pairings may use each subject at most once")
        if self.n_train_subjects < 2:
            raise ValueError("need at least 2 training subjects")
        if not 0 <= self.angle_deg <= 180:
            raise ValueError("angle_deg must lie in [0, 180]")
        if self.mated_noise < 0:
            raise ValueError("mated_noise must be non-negative")
        if not 0 <= self.morph_weight <= 1:
            raise ValueError("morph_weight must lie in [0, 1]")
        for name in ("n_pairings", "n_train_mated", "n_train_morphs", "n_nonmated"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthData:
    embeddings: list[Embedding]
    train_pairs: list[TrialPair]
    test_pairs: list[TrialPair]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_centroids(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return _unit(rng.standard_normal((n, dim)))


def rotate_towards_random(rng: np.random.Generator, c: np.ndarray, angle: float) -> np.ndarray:
    """A unit vector at ``angle`` radians from unit vector ``c``."""
    u = rng.standard_normal(c.shape[0])
    u -= (u @ c) * c
    u /= np.linalg.norm(u)
    if angle == 0.0:
        return c.copy()
    return _unit(math.cos(angle) * c + math.sin(angle) * u)


def noisy_sample(rng: np.random.Generator, c: np.ndarray, noise: float) -> np.ndarray:
    g = rng.standard_normal(c.shape[0])
    if noise == 0.0:
        return _unit(c)
    return _unit(c + noise * g / math.sqrt(c.shape[0]))


def generate(cfg: SynthConfig) -> SynthData:
    rng = np.random.default_rng(cfg.seed)
    d, k = cfg.dim, cfg.samples_per_subject
    angle = math.radians(cfg.angle_deg)

    # evaluation population with lookalike pairings (2i, 2i+1)
    centroids = random_centroids(rng, cfg.n_subjects, d)
    for i in range(cfg.n_pairings):
        centroids[2 * i + 1] = rotate_towards_random(rng, centroids[2 * i], angle)

    embeddings: list[Embedding] = []
    test_ids: list[list[str]] = []
    for s, c in enumerate(centroids):
        ids = []
        for j in range(k):
            iid = f"s{s:04d}_{j}"
            embeddings.append(Embedding(iid, f"s{s:04d}", noisy_sample(rng, c, cfg.mated_noise)))
            ids.append(iid)
        test_ids.append(ids)

    test_pairs: list[TrialPair] = []
    for ids in test_ids:
        test_pairs += [TrialPair(a, b, Label.MATED) for a, b in itertools.combinations(ids, 2)]
    for i in range(cfg.n_pairings):
        test_pairs += [TrialPair(a, b, Label.DOPPELGANGER)
                       for a in test_ids[2 * i] for b in test_ids[2 * i + 1]]
    lookalike = {(2 * i, 2 * i + 1) for i in range(cfg.n_pairings)}
    for _ in range(cfg.n_nonmated):
        while True:
            a, b = (int(x) for x in rng.choice(cfg.n_subjects, size=2, replace=False))
            if (min(a, b), max(a, b)) not in lookalike:
                break
        test_pairs.append(TrialPair(test_ids[a][int(rng.integers(k))],
                                    test_ids[b][int(rng.integers(k))], Label.NONMATED))

    # disjoint training population: mated pairs plus morph-style pairs
    train_c = random_centroids(rng, cfg.n_train_subjects, d)
    train_ids: list[list[str]] = []
    for s, c in enumerate(train_c):
        ids = []
        for j in range(k):
            iid = f"t{s:04d}_{j}"
            embeddings.append(Embedding(iid, f"t{s:04d}", noisy_sample(rng, c, cfg.mated_noise)))
            ids.append(iid)
        train_ids.append(ids)

    train_pairs: list[TrialPair] = []
    for _ in range(cfg.n_train_mated):
        s = int(rng.integers(cfg.n_train_subjects))
        a, b = (int(x) for x in rng.choice(k, size=2, replace=False))
        train_pairs.append(TrialPair(train_ids[s][a], train_ids[s][b], Label.MATED))
    w = cfg.morph_weight
    for m in range(cfg.n_train_morphs):
        t, s = (int(x) for x in rng.choice(cfg.n_train_subjects, size=2, replace=False))
        mix = _unit((1.0 - w) * train_c[t] + w * train_c[s])
        iid = f"m{m:04d}"
        embeddings.append(Embedding(iid, f"m{m:04d}", noisy_sample(rng, mix, cfg.mated_noise)))
        ref = train_ids[t][int(rng.integers(k))]
        train_pairs.append(TrialPair(ref, iid, Label.DOPPELGANGER))

    return SynthData(embeddings, train_pairs, test_pairs)
