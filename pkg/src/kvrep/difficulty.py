"""Difficulty labels and the MLP difficulty estimator over pooled KV features.

Labels live on a fixed 0..100 scale derived from fast/slow answer outcomes:

  d = 0    fast answer correct and short (fewer than 128 generated tokens)
  d = 25   fast answer correct but long
  d = 75   fast answer wrong, slow answer correct
  d = 100  both answers wrong

The estimator is a two-layer MLP (hidden width 512, ReLU) with a scaled
logistic head, trained by plain SGD with momentum on mean squared error
against d/100. Feature standardization statistics are computed on the training
split and stored with the parameters so inference applies the same transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

SHORT_FAST_LIMIT = 128
HIDDEN_WIDTH = 512
LABEL_VALUES = (0, 25, 75, 100)

# Label histogram of the full-scale dataset that motivated these defaults
# (7,500 items); desk-scale corpora make no attempt to reproduce it.
REFERENCE_LABEL_COUNTS = {0: 286, 25: 3467, 75: 860, 100: 2887}


@dataclass(frozen=True)
class DifficultyLabel:
    d: int
    fast_correct: bool
    slow_correct: bool
    fast_len: int


def assign_label(fast_correct: bool, slow_correct: bool, fast_len: int) -> DifficultyLabel:
    """Total truth table mapping fast/slow outcomes to a difficulty label."""
    if fast_len < 0:
        raise DomainError(f"fast_len must be >= 0, got {fast_len}")
    if fast_correct:
        d = 0 if fast_len < SHORT_FAST_LIMIT else 25
    else:
        d = 75 if slow_correct else 100
    return DifficultyLabel(d=d, fast_correct=bool(fast_correct), slow_correct=bool(slow_correct), fast_len=int(fast_len))


@dataclass
class MLPParams:
    """Two-layer MLP parameters; hidden width is fixed at 512."""

    w1: np.ndarray  # float64 [512, d_in]
    b1: np.ndarray  # float64 [512]
    w2: np.ndarray  # float64 [1, 512]
    b2: float

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        if self.w1.ndim != 2 or self.w1.shape[0] != HIDDEN_WIDTH:
            raise DomainError(f"w1 must be [{HIDDEN_WIDTH}, d_in], got {self.w1.shape}")
        if self.b1.shape != (HIDDEN_WIDTH,) or self.w2.shape != (1, HIDDEN_WIDTH):
            raise DomainError("b1/w2 shapes must match the fixed hidden width")
        for arr in (self.w1, self.b1, self.w2):
            if not np.all(np.isfinite(arr)):
                raise DomainError("MLP parameters must be finite")
        if not np.isfinite(self.b2):
            raise DomainError("MLP parameters must be finite")

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "MLPParams":
        return MLPParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2)


def init_params(d_in: int, seed: int = 0) -> MLPParams:
    """Seeded uniform init in +-1/sqrt(fan_in) per tensor, drawn in order w1, b1, w2, b2."""
    if d_in < 1:
        raise DomainError(f"d_in must be >= 1, got {d_in}")
    rng = np.random.default_rng(seed)
    a1 = 1.0 / np.sqrt(d_in)
    a2 = 1.0 / np.sqrt(HIDDEN_WIDTH)
    return MLPParams(
        w1=rng.uniform(-a1, a1, size=(HIDDEN_WIDTH, d_in)),
        b1=rng.uniform(-a1, a1, size=HIDDEN_WIDTH),
        w2=rng.uniform(-a2, a2, size=(1, HIDDEN_WIDTH)),
        b2=float(rng.uniform(-a2, a2)),
    )


def _check_features(params: MLPParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise DomainError(f"feature dim {x.shape} does not match d_in {params.d_in}")
    return x


def _forward_batch(params: MLPParams, xs: np.ndarray):
    z1 = xs @ params.w1.T + params.b1  # [B, 512]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2.T + params.b2  # [B, 1]
    y = 1.0 / (1.0 + np.exp(-z2))
    return z1, a1, y[:, 0]


def mlp_forward(params: MLPParams, x) -> float:
    """Difficulty estimate 100 * sigmoid(w2 . relu(w1 x + b1) + b2), in (0, 100)."""
    xs = _check_features(params, x)
    if xs.shape[0] != 1:
        raise DomainError("mlp_forward scores one feature vector; use mlp_loss_and_grad for batches")
    _, _, y = _forward_batch(params, xs)
    return float(100.0 * y[0])


def mlp_loss_and_grad(params: MLPParams, xs, ds):
    """Mean squared error on the d/100 scale plus exact gradients.

    xs is [B, d_in], ds the matching difficulty labels in [0, 100]. Returns
    (loss, MLPParams-shaped gradients). Mean reduction makes loss and grads
    invariant to duplicating the batch.
    """
    xs = _check_features(params, xs)
    ds = np.asarray(ds, dtype=np.float64).reshape(-1)
    if ds.shape[0] != xs.shape[0] or ds.shape[0] == 0:
        raise DomainError("batch features and labels must be nonempty and aligned")
    targets = ds / 100.0
    z1, a1, y = _forward_batch(params, xs)
    err = y - targets
    loss = float(np.mean(err**2))
    b = xs.shape[0]
    dz2 = (2.0 / b) * err * y * (1.0 - y)  # [B]
    gw2 = (dz2[None, :] @ a1).reshape(1, HIDDEN_WIDTH)
    gb2 = float(dz2.sum())
    da1 = dz2[:, None] * params.w2  # [B, 512]
    dz1 = da1 * (z1 > 0.0)
    gw1 = dz1.T @ xs
    gb1 = dz1.sum(axis=0)
    return loss, MLPParams(w1=gw1, b1=gb1, w2=gw2, b2=gb2)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0.0):
            raise DomainError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise DomainError("momentum must be in [0, 1)")


def mlp_train(features, labels, cfg: TrainConfig | None = None, params: MLPParams | None = None) -> MLPParams:
    """SGD with momentum over seeded shuffled mini-batches; fully deterministic.

    epochs=0 returns the initialization unchanged. The shuffle stream is
    decoupled from the init stream so the same cfg.seed drives both
    reproducibly.
    """
    cfg = cfg or TrainConfig()
    xs = np.asarray(features, dtype=np.float64)
    ds = np.asarray(labels, dtype=np.float64).reshape(-1)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise DomainError("training features must be a nonempty [N, d_in] array")
    if ds.shape[0] != xs.shape[0]:
        raise DomainError("training features and labels must be aligned")
    params = (params or init_params(xs.shape[1], cfg.seed)).copy()
    if xs.shape[1] != params.d_in:
        raise DomainError(f"feature dim {xs.shape[1]} does not match d_in {params.d_in}")
    shuffle = np.random.default_rng([cfg.seed, 1])
    vel = MLPParams(
        np.zeros_like(params.w1), np.zeros_like(params.b1), np.zeros_like(params.w2), 0.0
    )
    n = xs.shape[0]
    for _ in range(cfg.epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, g = mlp_loss_and_grad(params, xs[batch], ds[batch])
            vel.w1 = cfg.momentum * vel.w1 - cfg.learning_rate * g.w1
            vel.b1 = cfg.momentum * vel.b1 - cfg.learning_rate * g.b1
            vel.w2 = cfg.momentum * vel.w2 - cfg.learning_rate * g.w2
            vel.b2 = cfg.momentum * vel.b2 - cfg.learning_rate * g.b2
            params.w1 = params.w1 + vel.w1
            params.b1 = params.b1 + vel.b1
            params.w2 = params.w2 + vel.w2
            params.b2 = params.b2 + vel.b2
    return params


@dataclass
class DifficultyEstimator:
    """Trained MLP plus the feature standardization fitted alongside it."""

    params: MLPParams
    feature_mean: np.ndarray  # float64 [d_in]
    feature_std: np.ndarray  # float64 [d_in], zero-variance dims stored as 1.0

    def __post_init__(self):
        self.feature_mean = np.asarray(self.feature_mean, dtype=np.float64).reshape(-1)
        self.feature_std = np.asarray(self.feature_std, dtype=np.float64).reshape(-1)
        if self.feature_mean.shape[0] != self.params.d_in or self.feature_std.shape[0] != self.params.d_in:
            raise DomainError("standardization statistics must match d_in")
        if np.any(self.feature_std <= 0.0):
            raise DomainError("feature_std entries must be positive")

    @property
    def d_in(self) -> int:
        return self.params.d_in

    def predict(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.params.d_in:
            raise DomainError(f"feature dim {x.shape[0]} does not match d_in {self.params.d_in}")
        z = (x - self.feature_mean) / self.feature_std
        return mlp_forward(self.params, z)


def fit_estimator(features, labels, cfg: TrainConfig | None = None) -> DifficultyEstimator:
    """Standardize per dimension on the training set, then train the MLP."""
    xs = np.asarray(features, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise DomainError("training features must be a nonempty [N, d_in] array")
    mean = xs.mean(axis=0)
    std = xs.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    params = mlp_train((xs - mean) / std, labels, cfg)
    return DifficultyEstimator(params=params, feature_mean=mean, feature_std=std)


ESTIMATOR_KIND = "mlp-params"
_TENSOR_NAMES = ("w1", "b1", "w2", "b2", "feature_mean", "feature_std")


def estimator_tensors(est: DifficultyEstimator) -> dict:
    """Tensor mapping used to serialize an estimator into the trace container."""
    return {
        "w1": est.params.w1,
        "b1": est.params.b1,
        "w2": est.params.w2,
        "b2": np.asarray([est.params.b2], dtype=np.float64),
        "feature_mean": est.feature_mean,
        "feature_std": est.feature_std,
    }


def estimator_from_tensors(tensors) -> DifficultyEstimator:
    missing = [n for n in _TENSOR_NAMES if n not in tensors]
    if missing:
        raise DomainError(f"estimator tensors missing {missing}")
    params = MLPParams(
        w1=tensors["w1"],
        b1=tensors["b1"],
        w2=tensors["w2"],
        b2=float(np.asarray(tensors["b2"]).reshape(-1)[0]),
    )
    return DifficultyEstimator(
        params=params,
        feature_mean=tensors["feature_mean"],
        feature_std=tensors["feature_std"],
    )
