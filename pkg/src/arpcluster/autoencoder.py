"""120-50-3-120 fully connected autoencoder in plain numpy.

Encoder: two ReLU layers (120 -> 50 -> 3). Decoder: one sigmoid layer
(3 -> 120). Trained with element-mean binary cross-entropy and Adam.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .features import FEATURE_DIM, FeatureVector, as_matrix

log = logging.getLogger(__name__)

HIDDEN_DIM = 50
LATENT_DIM = 3
LAYER_SHAPES = {
    "W1": (HIDDEN_DIM, FEATURE_DIM), "b1": (HIDDEN_DIM,),
    "W2": (LATENT_DIM, HIDDEN_DIM), "b2": (LATENT_DIM,),
    "W3": (FEATURE_DIM, LATENT_DIM), "b3": (FEATURE_DIM,),
}
MODEL_FORMAT = "arpcluster-autoencoder"
MODEL_VERSION = 1

EPOCHS = 40
BATCH_SIZE = 16
LEARNING_RATE = 1e-4
N_FOLDS = 5
DEAD_LATENT_FRACTION = 0.9


class TooFewSamples(ValueError):
    pass


@dataclass
class AutoencoderParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams(**{k: v.copy() for k, v in self.items()})

    @classmethod
    def zeros(cls) -> "AutoencoderParams":
        return cls(**{k: np.zeros(s) for k, s in LAYER_SHAPES.items()})


@dataclass(frozen=True, eq=False)
class LatentPoint:
    event_id: str
    z: np.ndarray


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: AutoencoderParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})


@dataclass
class TrainReport:
    # folds[f][e] = (train_loss, val_loss) after epoch e of fold f
    folds: list[list[tuple[float, float]]]
    final: list[float]
    seed: int

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["fold", "epoch", "train_loss", "val_loss"])
        for f, history in enumerate(self.folds):
            for e, (tr, va) in enumerate(history, 1):
                writer.writerow([f, e, repr(tr), repr(va)])
        for e, tr in enumerate(self.final, 1):
            writer.writerow(["all", e, repr(tr), ""])


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(seed) -> AutoencoderParams:
    """Glorot-uniform weights, zero biases. ``seed`` may be an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return AutoencoderParams(
        W1=_glorot(rng, LAYER_SHAPES["W1"]), b1=np.zeros(HIDDEN_DIM),
        W2=_glorot(rng, LAYER_SHAPES["W2"]), b2=np.zeros(LATENT_DIM),
        W3=_glorot(rng, LAYER_SHAPES["W3"]), b3=np.zeros(FEATURE_DIM),
    )


def sigmoid(a: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _forward_cache(params: AutoencoderParams, X: np.ndarray):
    h_pre = X @ params.W1.T + params.b1
    h = np.maximum(h_pre, 0.0)
    z_pre = h @ params.W2.T + params.b2
    z = np.maximum(z_pre, 0.0)
    logits = z @ params.W3.T + params.b3
    return h_pre, h, z_pre, z, logits


def encode(params: AutoencoderParams, X: np.ndarray) -> np.ndarray:
    h = np.maximum(X @ params.W1.T + params.b1, 0.0)
    return np.maximum(h @ params.W2.T + params.b2, 0.0)


def forward(params: AutoencoderParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(latent z, reconstruction x_hat) for one vector or a batch of rows."""
    *_, z, logits = _forward_cache(params, np.asarray(x, dtype=np.float64))
    return z, sigmoid(logits)


def bce_loss(x_hat: np.ndarray, x: np.ndarray) -> float:
    """Binary cross-entropy averaged over every element (and over rows of a batch)."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(-(x * np.log(x_hat) + (1.0 - x) * np.log1p(-x_hat))))


def bce_from_logits(logits: np.ndarray, x: np.ndarray) -> float:
    # log(1 + e^a) - x*a: same value as bce_loss(sigmoid(a), x) without saturating
    return float(np.mean(np.logaddexp(0.0, logits) - x * logits))


def reconstruction_loss(params: AutoencoderParams, X: np.ndarray) -> float:
    return bce_from_logits(_forward_cache(params, X)[-1], X)


def backward(params: AutoencoderParams, x: np.ndarray) -> AutoencoderParams:
    """Exact gradient of the mean BCE w.r.t. every parameter.

    ``x`` is one vector or a batch of rows; for a batch the loss (and so the
    gradient) is averaged over rows too. ReLU'(0) is taken as 0.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h_pre, h, z_pre, z, logits = _forward_cache(params, X)
    d_logits = (sigmoid(logits) - X) / X.size
    d_z = d_logits @ params.W3
    d_z_pre = d_z * (z_pre > 0)
    d_h = d_z_pre @ params.W2
    d_h_pre = d_h * (h_pre > 0)
    return AutoencoderParams(
        W1=d_h_pre.T @ X, b1=d_h_pre.sum(axis=0),
        W2=d_z_pre.T @ h, b2=d_z_pre.sum(axis=0),
        W3=d_logits.T @ z, b3=d_logits.sum(axis=0),
    )


def adam_step(params: AutoencoderParams, grads: AutoencoderParams, state: AdamState,
              t: int, lr: float = LEARNING_RATE, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> tuple[AutoencoderParams, AdamState]:
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = getattr(grads, name)
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return AutoencoderParams(**new_params), AdamState(new_m, new_v, t)


def _fit(X: np.ndarray, rng: np.random.Generator, epochs: int, batch_size: int, lr: float,
         X_val: np.ndarray | None = None):
    params = init_params(rng)
    state = AdamState.zeros_like(params)
    history = []
    t = 0
    for _ in range(epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            batch = X[order[start:start + batch_size]]
            t += 1
            params, state = adam_step(params, backward(params, batch), state, t, lr)
        train_loss = reconstruction_loss(params, X)
        val_loss = reconstruction_loss(params, X_val) if X_val is not None else float("nan")
        history.append((train_loss, val_loss))
    return params, history


def _train_once(X: np.ndarray, seed: int, epochs: int, batch_size: int, lr: float,
                n_folds: int, cross_validate: bool):
    folds = []
    if cross_validate:
        assignment = np.array_split(np.random.default_rng([seed, 0]).permutation(len(X)), n_folds)
        for f, val_idx in enumerate(assignment):
            train_idx = np.setdiff1d(np.arange(len(X)), val_idx)
            _, history = _fit(X[np.sort(train_idx)], np.random.default_rng([seed, f + 1]),
                              epochs, batch_size, lr, X_val=X[np.sort(val_idx)])
            folds.append(history)
    params, history = _fit(X, np.random.default_rng(seed), epochs, batch_size, lr)
    return params, TrainReport(folds, [tr for tr, _ in history], seed)


def train(features: Sequence[FeatureVector] | np.ndarray, seed: int = 0, epochs: int = EPOCHS,
          batch_size: int = BATCH_SIZE, lr: float = LEARNING_RATE, n_folds: int = N_FOLDS,
          cross_validate: bool = True) -> tuple[AutoencoderParams, TrainReport]:
    """Train the final model on all data, reporting k-fold losses along the way.

    Cross-validation is for reporting only; the returned parameters come from
    a separate run over the full data set and do not depend on it.
    """
    X = features if isinstance(features, np.ndarray) else as_matrix(features)
    if len(X) < n_folds:
        raise TooFewSamples(f"need at least {n_folds} feature vectors, got {len(X)}")
    params, report = _train_once(X, seed, epochs, batch_size, lr, n_folds, cross_validate)
    dead = np.mean(~encode(params, X).any(axis=1))
    if dead > DEAD_LATENT_FRACTION:
        log.warning("%.0f%% of latents are zero with seed %d; retraining with seed %d",
                    100 * dead, seed, seed + 1)
        params, report = _train_once(X, seed + 1, epochs, batch_size, lr, n_folds,
                                     cross_validate)
    return params, report


def encode_all(params: AutoencoderParams, features: Sequence[FeatureVector]) -> list[LatentPoint]:
    # one vector at a time: batched BLAS rounding depends on the row position
    return [LatentPoint(f.event_id, encode(params, f.values)) for f in features]


def save_model(params: AutoencoderParams, stream, seed: int | None = None) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "seed": seed,
        "shapes": {k: list(a.shape) for k, a in params.items()},
        "weights": {k: a.ravel(order="C").tolist() for k, a in params.items()},
    }
    json.dump(doc, stream)
    stream.write("\n")


def load_model(stream) -> AutoencoderParams:
    doc = json.load(stream)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError("unrecognised model file")
    arrays = {}
    for name, shape in LAYER_SHAPES.items():
        if tuple(doc["shapes"][name]) != shape:
            raise ValueError(f"{name} has shape {doc['shapes'][name]}, expected {list(shape)}")
        arrays[name] = np.array(doc["weights"][name], dtype=np.float64).reshape(shape)
    return AutoencoderParams(**arrays)


def write_latents_csv(points: Sequence[LatentPoint], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["event_id", "z0", "z1", "z2"])
    for p in points:
        writer.writerow([p.event_id] + [repr(float(v)) for v in p.z])


def read_latents_csv(stream) -> list[LatentPoint]:
    reader = csv.reader(stream)
    if next(reader) != ["event_id", "z0", "z1", "z2"]:
        raise ValueError("not a latent CSV: unexpected header")
    return [LatentPoint(row[0], np.array([float(v) for v in row[1:]])) for row in reader if row]
