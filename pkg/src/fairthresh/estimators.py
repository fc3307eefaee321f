"""Conditional-probability estimators with a vanishing score floor.

Two built-in estimator families are provided: regularized logistic regression
trained by full-batch gradient descent with backtracking line search, and a
k-nearest-neighbour positive-rate estimator.  Group-aware models fit one
estimator per sensitive group; blind models additionally fit a marginal
estimator on the features alone.

Every score is clamped from below by the floor c = N^(-1/4) (clipped to
[1e-6, 0.49]) so that group mean scores stay bounded away from zero no matter
how extreme the raw estimates are.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError, GroupCoverageError, SchemaError

FLOOR_MIN = 1e-6
FLOOR_MAX = 0.49


def floor_value(n: int, N: int) -> float:
    """Score floor c = N^(-1/4), clipped to [1e-6, 0.49]."""
    if N < 1:
        raise ConfigError(f"unlabeled sample size must be >= 1, got {N}")
    return float(min(max(N ** -0.25, FLOOR_MIN), FLOOR_MAX))


def apply_floor(raw_score, n: int, N: int):
    """Clamp raw scores from below by the floor for sample sizes (n, N)."""
    return np.maximum(raw_score, floor_value(n, N))


@dataclass(frozen=True)
class LogisticConfig:
    """Settings for the gradient-descent logistic solver.

    The L2 penalty covers all coefficients including the intercept, so
    l2_lambda -> inf drives every raw score to 0.5.
    """

    l2_lambda: float = 0.0
    max_iters: int = 1000
    grad_tolerance: float = 1e-6
    step_init: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4

    def __post_init__(self):
        if self.l2_lambda < 0:
            raise ConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be positive, got {self.max_iters}")
        if self.grad_tolerance <= 0:
            raise ConfigError(f"grad_tolerance must be > 0, got {self.grad_tolerance}")


@dataclass(frozen=True)
class KnnConfig:
    """k-nearest-neighbour settings; distances are Euclidean."""

    k: int = 11

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logistic_loss(w, X1, y, lam):
    z = X1 @ w
    # mean of log(1 + e^z) - y*z, computed stably
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    return loss + 0.5 * lam * float(w @ w)


def logistic_descent(X: np.ndarray, y: np.ndarray, cfg: LogisticConfig):
    """Minimize mean log-loss + (lambda/2)||w||^2 by backtracking gradient descent.

    Returns (weights, intercept, converged, losses); the loss sequence is
    non-increasing by the Armijo acceptance rule.
    """
    X1 = np.hstack([np.ones((X.shape[0], 1)), X])
    w = np.zeros(X1.shape[1])
    lam = cfg.l2_lambda
    losses = [_logistic_loss(w, X1, y, lam)]
    converged = False
    for _ in range(cfg.max_iters):
        p = _sigmoid(X1 @ w)
        grad = X1.T @ (p - y) / X1.shape[0] + lam * w
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= cfg.grad_tolerance:
            converged = True
            break
        step = cfg.step_init
        cur = losses[-1]
        while True:
            trial = w - step * grad
            val = _logistic_loss(trial, X1, y, lam)
            if val <= cur - cfg.armijo * step * gnorm * gnorm or step < 1e-16:
                break
            step *= cfg.backtrack
        w = trial
        losses.append(val)
    else:
        p = _sigmoid(X1 @ w)
        grad = X1.T @ (p - y) / X1.shape[0] + lam * w
        converged = float(np.linalg.norm(grad)) <= cfg.grad_tolerance
    return w[1:], float(w[0]), converged, losses


def _row_hash_fractions(X: np.ndarray, salt: int) -> np.ndarray:
    # deterministic per-row value in [-1, 1] from a digest of the row bytes
    out = np.empty(X.shape[0])
    for i, row in enumerate(np.ascontiguousarray(X, dtype=np.float64)):
        digest = hashlib.blake2b(row.tobytes(), digest_size=8, salt=salt.to_bytes(8, "little"))
        v = int.from_bytes(digest.digest(), "little") / float(2**64)
        out[i] = 2.0 * v - 1.0
    return out


@dataclass(frozen=True)
class ScoreModel:
    """A fitted score estimator plus the floor/jitter post-processing.

    group_params[s] holds the parameters of the estimator for group s;
    marginal_params is present only in blind mode.  Scoring is deterministic,
    including the optional jitter, which is a pure function of the row bytes.
    """

    kind: str  # "logistic" | "knn" | "external"
    mode: str  # "aware" | "blind"
    group_params: tuple
    marginal_params: object | None = None
    floor: float = FLOOR_MIN
    jitter_amplitude: float = 0.0
    converged: bool = True

    def with_floor(self, c: float) -> "ScoreModel":
        return replace(self, floor=c)

    def _raw(self, X: np.ndarray, params) -> np.ndarray:
        if self.kind == "logistic":
            w, b = params
            return _sigmoid(X @ w + b)
        if self.kind == "knn":
            feats, labels, k = params
            return _knn_scores(X, feats, labels, k)
        raise SchemaError("external score models cannot score rows; supply a scores file")

    def _finish(self, raw: np.ndarray, X: np.ndarray, salt: int) -> np.ndarray:
        if self.jitter_amplitude > 0.0:
            raw = raw + self.jitter_amplitude * _row_hash_fractions(X, salt)
            raw = np.clip(raw, 0.0, 1.0)
        return np.maximum(raw, self.floor)

    def score_group(self, X, s: int) -> np.ndarray:
        """Floored score eta_hat(x, s) for every row of X."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        return self._finish(self._raw(X, self.group_params[s]), X, s)

    def score_rowwise(self, X, S) -> np.ndarray:
        """Floored score eta_hat(x_i, s_i) using each row's own group."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        S = np.asarray(S)
        out = np.empty(X.shape[0])
        for s in (0, 1):
            mask = S == s
            if mask.any():
                out[mask] = self.score_group(X[mask], s)
        return out

    def score_marginal(self, X) -> np.ndarray:
        """Floored marginal score eta_hat(x); blind-mode models only."""
        if self.marginal_params is None:
            raise SchemaError("model has no marginal estimator; refit with mode='blind'")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        return self._finish(self._raw(X, self.marginal_params), X, 2)

    def to_json(self) -> dict:
        def pack(params):
            if params is None:
                return None
            if self.kind == "logistic":
                w, b = params
                return {"weights": [float(v) for v in w], "intercept": float(b)}
            feats, labels, k = params
            return {"k": int(k), "features": feats.tolist(), "labels": labels.tolist()}

        return {
            "kind": self.kind,
            "mode": self.mode,
            "floor": self.floor,
            "jitter_amplitude": self.jitter_amplitude,
            "converged": self.converged,
            "groups": [pack(p) for p in self.group_params],
            "marginal": pack(self.marginal_params),
        }

    @staticmethod
    def from_json(obj: dict) -> "ScoreModel":
        kind = obj["kind"]

        def unpack(payload):
            if payload is None:
                return None
            if kind == "logistic":
                return (np.asarray(payload["weights"], dtype=np.float64), float(payload["intercept"]))
            return (
                np.asarray(payload["features"], dtype=np.float64),
                np.asarray(payload["labels"], dtype=np.int64),
                int(payload["k"]),
            )

        return ScoreModel(
            kind=kind,
            mode=obj["mode"],
            group_params=tuple(unpack(p) for p in obj["groups"]),
            marginal_params=unpack(obj.get("marginal")),
            floor=float(obj["floor"]),
            jitter_amplitude=float(obj.get("jitter_amplitude", 0.0)),
            converged=bool(obj.get("converged", True)),
        )


def external_score_model(floor: float = FLOOR_MIN, mode: str = "aware") -> ScoreModel:
    """Placeholder model for calibrations built from precomputed score files."""
    return ScoreModel(kind="external", mode=mode, group_params=(None, None), floor=floor)


def _knn_scores(queries: np.ndarray, feats: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    out = np.empty(queries.shape[0])
    block = max(1, int(2**22 // max(1, feats.shape[0])))
    for start in range(0, queries.shape[0], block):
        q = queries[start : start + block]
        d2 = ((q[:, None, :] - feats[None, :, :]) ** 2).sum(axis=2)
        # stable argsort: distance ties resolve to the smaller training row index
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[start : start + block] = labels[order].mean(axis=1)
    return out


def fit_logistic(train: LabeledDataset, cfg: LogisticConfig = LogisticConfig(), mode: str = "aware") -> ScoreModel:
    """Fit per-group logistic scores (plus a marginal model in blind mode)."""
    params = []
    converged = True
    for s in (0, 1):
        mask = train.sensitive == s
        if not mask.any():
            raise GroupCoverageError(f"cannot fit group {s}: no rows")
        w, b, ok, _ = logistic_descent(train.features[mask], train.labels[mask].astype(np.float64), cfg)
        params.append((w, b))
        converged &= ok
    marginal = None
    if mode == "blind":
        w, b, ok, _ = logistic_descent(train.features, train.labels.astype(np.float64), cfg)
        marginal = (w, b)
        converged &= ok
    return ScoreModel(
        kind="logistic",
        mode=mode,
        group_params=tuple(params),
        marginal_params=marginal,
        converged=converged,
    )


def fit_knn(train: LabeledDataset, cfg: KnnConfig = KnnConfig(), mode: str = "aware") -> ScoreModel:
    """Fit per-group k-NN positive-rate scores (plus pooled k-NN in blind mode)."""
    params = []
    for s in (0, 1):
        mask = train.sensitive == s
        size = int(mask.sum())
        if size == 0:
            raise GroupCoverageError(f"cannot fit group {s}: no rows")
        if cfg.k > size:
            raise ConfigError(f"k={cfg.k} exceeds group {s} size {size}")
        params.append((train.features[mask].copy(), train.labels[mask].copy(), cfg.k))
    marginal = None
    if mode == "blind":
        if cfg.k > train.n:
            raise ConfigError(f"k={cfg.k} exceeds sample size {train.n}")
        marginal = (train.features.copy(), train.labels.copy(), cfg.k)
    return ScoreModel(kind="knn", mode=mode, group_params=tuple(params), marginal_params=marginal)
