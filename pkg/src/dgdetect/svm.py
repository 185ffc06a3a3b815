"""RBF-kernel SVM trained with SMO, Platt-calibrated to a [0, 1] score.

Labels are +1 for doppelgänger and -1 for mated, so a calibrated score near
1 means doppelgänger.
"""

from __future__ import annotations

import logging
import math
import re
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import format_float
from .errors import ModelFormatError, TrainingError
from .features import FeatureConfig

log = logging.getLogger(__name__)

MODEL_MAGIC = "svm-v1"
_TAU = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    gamma: float | str = "scale"
    tolerance: float = 1e-3
    max_passes: int = 10_000_000
    seed: int = 0
    cache_bytes: int = 128 * 1024 * 1024

    def __post_init__(self):
        if not self.C > 0:
            raise TrainingError(f"C must be positive, got {self.C}")
        if self.gamma not in ("auto", "scale") and not float(self.gamma) > 0:
            raise TrainingError(f"gamma must be positive, 'auto' or 'scale', got {self.gamma}")
        if not self.tolerance > 0:
            raise TrainingError("tolerance must be positive")

    def resolved_gamma(self, X: np.ndarray) -> float:
        """'auto' is 1/D; 'scale' is 1/(D * Var(X)), which stays meaningful for
        unit-normalised difference vectors whose entries are far below 1."""
        dim = X.shape[1]
        if self.gamma == "auto":
            return 1.0 / dim
        if self.gamma == "scale":
            var = float(X.var())
            return 1.0 / (dim * var) if var > 0 else 1.0 / dim
        return float(self.gamma)


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray  # (K, D)
    dual_coef: np.ndarray        # alpha_i * y_i
    bias: float
    gamma: float
    A: float = -1.0
    B: float = 0.0
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def n_sv(self) -> int:
        return self.support_vectors.shape[0]


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return math.exp(-gamma * float(np.dot(d, d)))


def rbf_rows(X: np.ndarray, Z: np.ndarray, gamma: float) -> np.ndarray:
    """K[i, j] = exp(-gamma * ||Z[i] - X[j]||^2), row by row for exactness at zero distance."""
    out = np.empty((Z.shape[0], X.shape[0]))
    for i, z in enumerate(Z):
        d = X - z
        out[i] = np.exp(-gamma * np.einsum("ij,ij->i", d, d))
    return out


class KernelCache:
    """LRU cache of kernel rows bounded by a byte budget."""

    def __init__(self, X: np.ndarray, gamma: float, budget_bytes: int):
        self.X = X
        self.gamma = gamma
        self.capacity = max(2, budget_bytes // max(1, X.shape[0] * 8))
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.hits = self.misses = 0

    def row(self, i: int) -> np.ndarray:
        r = self._rows.get(i)
        if r is not None:
            self._rows.move_to_end(i)
            self.hits += 1
            return r
        self.misses += 1
        d = self.X - self.X[i]
        r = np.exp(-self.gamma * np.einsum("ij,ij->i", d, d))
        self._rows[i] = r
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return r


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    gradient: np.ndarray
    iterations: int
    gap: float


def solve_smo(X: np.ndarray, y: np.ndarray, C: float, gamma: float, tol: float,
              max_iter: int, cache_bytes: int = 128 * 1024 * 1024,
              order: np.ndarray | None = None) -> SmoResult:
    """Solve min 1/2 a'Qa - e'a s.t. y'a = 0, 0 <= a <= C with Q_ij = y_i y_j K_ij.

    The working pair is the maximal KKT violating pair. ``order`` permutes
    the scan order, which only affects ties in the argmax/argmin.
    """
    n = X.shape[0]
    cache = KernelCache(X, gamma, cache_bytes)
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    perm = np.arange(n) if order is None else np.asarray(order)
    it = 0
    gap = math.inf
    while True:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        yG = -y * G
        up_vals = np.where(up, yG, -np.inf)[perm]
        low_vals = np.where(low, yG, np.inf)[perm]
        i = int(perm[np.argmax(up_vals)])
        j = int(perm[np.argmin(low_vals)])
        gap = yG[i] - yG[j] if up[i] and low[j] else 0.0
        if gap <= tol:
            break
        if it >= max_iter:
            log.warning("SMO stopped at max_passes=%d with KKT gap %.3g", max_iter, gap)
            break
        it += 1
        Ki, Kj = cache.row(i), cache.row(j)
        Kij = Ki[j]
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(Ki[i] + Kj[j] - 2.0 * Kij, _TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(Ki[i] + Kj[j] - 2.0 * Kij, _TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        dai, daj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        # dG = Q[:, i] dai + Q[:, j] daj with Q[:, k] = y * y_k * K[:, k]
        G += y * (y[i] * dai * Ki + y[j] * daj * Kj)
    return SmoResult(alpha, _rho(alpha, y, G, C), G, it, gap)


def _rho(alpha, y, G, C) -> float:
    yG = y * G
    at_ub = alpha >= C
    at_lb = alpha <= 0
    free = ~(at_ub | at_lb)
    if free.any():
        return float(yG[free].sum() / free.sum())
    # bounded: take the midpoint of the feasible interval
    pos = y > 0
    ub_mask = (at_ub & ~pos) | (at_lb & pos)
    lb_mask = (at_ub & pos) | (at_lb & ~pos)
    ub = yG[ub_mask].min() if ub_mask.any() else math.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -math.inf
    if math.isinf(ub) or math.isinf(lb):
        return float(lb if math.isinf(ub) else ub)
    return float((ub + lb) / 2)


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(0.5 * ay @ K @ ay - alpha.sum())


def _check_training_input(X, y):
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise TrainingError("features and labels are empty or misaligned")
    if not np.all(np.isfinite(X)):
        raise TrainingError("non-finite feature value")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingError("training data must contain both mated and doppelgänger examples")


def train_arrays(X: np.ndarray, y: np.ndarray, config: SvmConfig = SvmConfig(),
                 feature_config: FeatureConfig = FeatureConfig()) -> SvmModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_training_input(X, y)
    gamma = config.resolved_gamma(X)
    order = np.random.default_rng(config.seed).permutation(X.shape[0])
    res = solve_smo(X, y, config.C, gamma, config.tolerance, config.max_passes,
                    config.cache_bytes, order)
    sv = res.alpha > 0
    if not sv.any():
        raise TrainingError("training produced no support vectors")
    log.info("SMO: %d iterations, %d support vectors, gap %.3g",
             res.iterations, int(sv.sum()), res.gap)
    svs = X[sv].copy()
    coef = (res.alpha * y)[sv].copy()
    svs.setflags(write=False)
    coef.setflags(write=False)
    return SvmModel(svs, coef, -res.rho, gamma, feature_config=feature_config)


def train(features, config: SvmConfig = SvmConfig(),
          feature_config: FeatureConfig = FeatureConfig()) -> SvmModel:
    """Train on labeled difference vectors (uncalibrated: A=-1, B=0)."""
    from .features import as_matrix

    features = list(features)
    if any(f.label is None for f in features):
        raise TrainingError("every training feature needs a label")
    X, y = as_matrix(features)
    return train_arrays(X, y, config, feature_config)


def decision_values(model: SvmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: model {model.dim}, feature {X.shape[1]}")
    K = rbf_rows(model.support_vectors, X, model.gamma)
    return K @ model.dual_coef + model.bias


def decision_value(model: SvmModel, feature) -> float:
    values = getattr(feature, "values", feature)
    return float(decision_values(model, values)[0])


def sigmoid_score(f, A: float, B: float):
    """1 / (1 + exp(A f + B)) evaluated without overflow."""
    z = A * np.asarray(f, dtype=np.float64) + B
    out = np.where(z >= 0, np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))),
                   1.0 / (1.0 + np.exp(-np.abs(z))))
    return out if out.ndim else float(out)


def scores(model: SvmModel, X) -> np.ndarray:
    return sigmoid_score(decision_values(model, X), model.A, model.B)


def score(model: SvmModel, feature) -> float:
    return float(sigmoid_score(decision_value(model, feature), model.A, model.B))


def fit_platt(f: np.ndarray, y: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Regularised maximum-likelihood sigmoid fit (Newton with backtracking).

    Targets are smoothed as (N+ + 1)/(N+ + 2) and 1/(N- + 2).
    """
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int(np.sum(y > 0))
    n_neg = int(np.sum(y <= 0))
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("calibration set must contain both classes")
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y > 0, hi, lo)
    A, B = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    min_step, sigma, eps = 1e-10, 1e-12, 1e-5

    def objective(A, B):
        z = f * A + B
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)),
                                     (t - 1) * z + np.log1p(np.exp(z)))))

    fval = objective(A, B)
    for _ in range(max_iter):
        z = f * A + B
        p = np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))
        q = np.where(z >= 0, 1 / (1 + np.exp(-z)), np.exp(z) / (1 + np.exp(z)))
        d2 = p * q
        h11 = sigma + float(np.sum(f * f * d2))
        h22 = sigma + float(np.sum(d2))
        h21 = float(np.sum(f * d2))
        d1 = t - p
        g1 = float(np.sum(f * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < eps and abs(g2) < eps:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= min_step:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2
        else:
            log.warning("Platt fit: line search failed")
            break
    return A, B


def calibrate(model: SvmModel, held_out) -> SvmModel:
    """Fit the sigmoid score map on labeled held-out features.

    A non-negative slope would invert or flatten the score ordering; in that
    case the plain sigmoid (A=-1, B=0) is kept and a warning is logged.
    """
    from .features import as_matrix

    held_out = list(held_out)
    X, y = as_matrix(held_out)
    if X.shape[0] == 0:
        raise TrainingError("calibration set is empty")
    return calibrate_arrays(model, X, y)


def calibrate_arrays(model: SvmModel, X, y) -> SvmModel:
    A, B = fit_platt(decision_values(model, X), np.asarray(y))
    if not A < 0:
        log.warning("Platt fit gave slope A=%.3g >= 0; keeping plain sigmoid", A)
        A, B = -1.0, 0.0
    return replace(model, A=float(A), B=float(B))


def stratified_split(y: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices (fit, held_out) with ``fraction`` of each class held out."""
    rng = np.random.default_rng(seed)
    held = []
    for cls in (-1.0, 1.0):
        idx = np.flatnonzero(y == cls)
        k = int(round(fraction * idx.size))
        k = min(max(k, 1), idx.size - 1) if idx.size > 1 else 0
        held.append(rng.permutation(idx)[:k])
    held_idx = np.sort(np.concatenate(held))
    fit_idx = np.setdiff1d(np.arange(y.size), held_idx)
    return fit_idx, held_idx


def train_calibrated(X: np.ndarray, y: np.ndarray, config: SvmConfig = SvmConfig(),
                     feature_config: FeatureConfig = FeatureConfig(),
                     calibration_fraction: float = 0.2) -> SvmModel:
    """Train on a stratified share of the data and Platt-calibrate on the rest."""
    y = np.asarray(y, dtype=np.float64)
    _check_training_input(np.asarray(X, dtype=np.float64), y)
    fit_idx, held_idx = stratified_split(y, calibration_fraction, config.seed)
    if held_idx.size == 0 or len(set(y[held_idx])) < 2:
        log.warning("too few examples for a held-out calibration split; "
                    "calibrating on the training data")
        model = train_arrays(X, y, config, feature_config)
        return calibrate_arrays(model, X, y)
    model = train_arrays(X[fit_idx], y[fit_idx], config, feature_config)
    return calibrate_arrays(model, X[held_idx], y[held_idx])


# -- serialization -------------------------------------------------------

_HEADER_RE = re.compile(
    r"svm-v1 dim=(?P<dim>\d+) nsv=(?P<nsv>\d+) gamma=(?P<gamma>\S+) bias=(?P<bias>\S+) "
    r"A=(?P<A>\S+) B=(?P<B>\S+) feat=(?P<feat>\S+)")


def format_model(model: SvmModel, comments=()) -> str:
    lines = [c if c.startswith("#") else "# " + c for c in comments]
    lines.append(
        f"{MODEL_MAGIC} dim={model.dim} nsv={model.n_sv} gamma={format_float(model.gamma)} "
        f"bias={format_float(model.bias)} A={format_float(model.A)} B={format_float(model.B)} "
        f"feat={model.feature_config.encode()}")
    for c, v in zip(model.dual_coef, model.support_vectors):
        lines.append(" ".join([format_float(c), *map(format_float, v)]))
    return "\n".join(lines) + "\n"


def save_model(model: SvmModel, path, comments=()) -> None:
    Path(path).write_text(format_model(model, comments), encoding="utf-8")


def parse_model(text: str, path=None) -> SvmModel:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    if not lines or not lines[0].startswith(MODEL_MAGIC + " "):
        got = lines[0].split()[0] if lines and lines[0].split() else "nothing"
        raise ModelFormatError(f"not an {MODEL_MAGIC} model file (found {got!r})", path)
    m = _HEADER_RE.fullmatch(lines[0].strip())
    if not m:
        raise ModelFormatError("malformed model header", path)
    dim, nsv = int(m["dim"]), int(m["nsv"])
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != nsv:
        raise ModelFormatError(f"truncated model: expected {nsv} support vectors, "
                               f"found {len(body)}", path)
    coef = np.empty(nsv)
    svs = np.empty((nsv, dim))
    for k, ln in enumerate(body):
        tok = ln.split()
        if len(tok) != dim + 1:
            raise ModelFormatError(f"support vector {k + 1} has {len(tok) - 1} values, "
                                   f"expected {dim}", path)
        try:
            coef[k] = float(tok[0])
            svs[k] = [float(t) for t in tok[1:]]
        except ValueError:
            raise ModelFormatError(f"non-numeric value in support vector {k + 1}", path) from None
    try:
        feat = FeatureConfig.decode(m["feat"])
        gamma, bias, A, B = (float(m[k]) for k in ("gamma", "bias", "A", "B"))
    except Exception as exc:
        raise ModelFormatError(f"bad header field: {exc}", path) from None
    svs.setflags(write=False)
    coef.setflags(write=False)
    return SvmModel(svs, coef, bias, gamma, A, B, feat)


def load_model(path) -> SvmModel:
    path = Path(path)
    return parse_model(path.read_text(encoding="utf-8"), path)
