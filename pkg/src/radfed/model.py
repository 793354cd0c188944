"""Self-contained differentiable models over flat parameter vectors.

Three families: binary logistic regression (sigmoid, optionally
L2-regularized), a fully connected softmax MLP with ReLU hidden layers,
and a bias-free linear probe with squared loss used mainly in tests.
Everything the server ships around is one float64 vector plus family
metadata.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .data import ClientDataset
from .errors import ConsistencyError, NumericError, ParameterError
from .rng import derive_rng

CHECKPOINT_FORMAT = "radfed-checkpoint"


@dataclass(frozen=True)
class ModelFamily:
    """Architecture descriptor: kind plus layer sizes.

    ``logistic``/``linear`` use a single entry (the feature count); for
    ``mlp`` the sizes run input, hidden..., output.
    """

    kind: str
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp", "linear"):
            raise ParameterError(f"unknown model family {self.kind!r}")
        if any(s < 1 for s in self.layer_sizes):
            raise ParameterError("layer sizes must be positive")
        if self.kind in ("logistic", "linear") and len(self.layer_sizes) != 1:
            raise ParameterError(f"{self.kind} takes exactly one size (the feature count)")
        if self.kind == "mlp" and len(self.layer_sizes) < 2:
            raise ParameterError("mlp needs at least input and output sizes")
        if self.activation != "relu":
            raise ParameterError(f"unsupported activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        if self.kind == "logistic":
            return self.layer_sizes[0] + 1
        if self.kind == "linear":
            return self.layer_sizes[0]
        sizes = self.layer_sizes
        return sum((sizes[i] + 1) * sizes[i + 1] for i in range(len(sizes) - 1))

    @property
    def n_outputs(self) -> int:
        if self.kind in ("logistic", "linear"):
            return 2 if self.kind == "logistic" else 1
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelFamily":
        return cls(
            kind=raw["kind"],
            layer_sizes=tuple(raw["layer_sizes"]),
            activation=raw.get("activation", "relu"),
        )


def logistic_family(n_features: int) -> ModelFamily:
    return ModelFamily(kind="logistic", layer_sizes=(n_features,))


def linear_family(n_features: int) -> ModelFamily:
    return ModelFamily(kind="linear", layer_sizes=(n_features,))


def mlp_family(layer_sizes: tuple[int, ...] | list[int]) -> ModelFamily:
    return ModelFamily(kind="mlp", layer_sizes=tuple(layer_sizes))


@dataclass
class ModelState:
    """Flat parameter vector plus its family; the unit of aggregation."""

    params: np.ndarray
    family: ModelFamily
    l2: float = 0.0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.family.n_params,):
            raise ConsistencyError(
                f"expected {self.family.n_params} parameters, got {self.params.shape}"
            )
        if not np.isfinite(self.params).all():
            raise NumericError("model parameters are not finite")
        if self.l2 < 0:
            raise ParameterError("l2 must be nonnegative")

    def copy(self) -> "ModelState":
        return ModelState(params=self.params.copy(), family=self.family, l2=self.l2)


@dataclass(frozen=True)
class TrainingConfig:
    """Local SGD settings for one client update."""

    batch_size: int
    epochs: int
    learning_rate: float
    prox_mu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ParameterError("epochs must be at least 1")
        # learning_rate 0 is allowed: it turns the update into pure scoring
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be nonnegative")
        if self.prox_mu < 0:
            raise ParameterError("prox_mu must be nonnegative")


def init_model(family: ModelFamily, seed: int = 0, l2: float = 0.0) -> ModelState:
    """Deterministic initialization: zeros for logistic/linear, uniform
    fan-in scaling for MLP weights (biases zero)."""
    if family.kind in ("logistic", "linear"):
        return ModelState(params=np.zeros(family.n_params), family=family, l2=l2)
    rng = derive_rng(seed, "init")
    sizes = family.layer_sizes
    chunks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ModelState(params=np.concatenate(chunks), family=family, l2=l2)


def _unpack_mlp(params: np.ndarray, sizes: tuple[int, ...]):
    """Per-layer (W, b) views into the flat vector (no copies)."""
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logistic_loss_grad(params, n_features, x, y):
    w = params[:n_features]
    b = params[n_features]
    z = x @ w + b
    # stable binary cross-entropy: max(z,0) - z*y + log1p(exp(-|z|))
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    g = (_sigmoid(z) - y) / len(y)
    grad = np.concatenate([x.T @ g, [g.sum()]])
    return loss, grad


def _mlp_loss_grad(params, sizes, x, y):
    layers = _unpack_mlp(params, sizes)
    hidden = []
    h = x
    for w, b in layers[:-1]:
        z = h @ w + b
        h = np.maximum(z, 0.0)
        hidden.append(h)
    w_out, b_out = layers[-1]
    logits = h @ w_out + b_out
    zmax = logits.max(axis=1, keepdims=True)
    log_z = zmax + np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True))
    n = len(y)
    loss = float(np.mean(log_z.ravel() - logits[np.arange(n), y]))
    delta = np.exp(logits - log_z)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads = [None] * len(layers)
    inputs = [x] + hidden
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        gw = inputs[li].T @ delta
        gb = delta.sum(axis=0)
        grads[li] = (gw, gb)
        if li > 0:
            delta = (delta @ w.T) * (inputs[li] > 0)
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, flat


def _linear_loss_grad(params, x, y):
    pred = x @ params
    resid = pred - y.astype(np.float64)
    loss = float(0.5 * np.mean(resid ** 2))
    grad = x.T @ resid / len(y)
    return loss, grad


def loss_and_grad(
    state: ModelState,
    x: np.ndarray,
    y: np.ndarray,
    anchor: ModelState | None = None,
    prox_mu: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient on one batch.

    Adds the state's L2 penalty, and a proximal pull toward ``anchor``
    when ``prox_mu`` > 0 (anchor is then required).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or len(y) != x.shape[0] or len(y) == 0:
        raise ParameterError("batch must be a nonempty 2-d matrix with matching labels")
    if not np.isfinite(x).all():
        raise NumericError("batch features contain non-finite values")
    if prox_mu > 0 and anchor is None:
        raise ParameterError("prox_mu > 0 requires an anchor model")

    family = state.family
    # overflow on diverging parameters surfaces as a non-finite loss, which
    # client_update converts into a NumericError
    with np.errstate(over="ignore", invalid="ignore"):
        if family.kind == "logistic":
            loss, grad = _logistic_loss_grad(state.params, family.layer_sizes[0], x, y)
        elif family.kind == "mlp":
            loss, grad = _mlp_loss_grad(state.params, family.layer_sizes, x, y)
        else:
            loss, grad = _linear_loss_grad(state.params, x, y)

    if state.l2 > 0:
        loss += 0.5 * state.l2 * float(state.params @ state.params)
        grad = grad + state.l2 * state.params
    if anchor is not None and prox_mu > 0:
        diff = state.params - anchor.params
        loss += 0.5 * prox_mu * float(diff @ diff)
        grad = grad + prox_mu * diff
    return loss, grad


def predict_proba(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (n, n_classes)."""
    x = np.asarray(x, dtype=np.float64)
    family = state.family
    if family.kind == "logistic":
        w = state.params[:family.layer_sizes[0]]
        p = _sigmoid(x @ w + state.params[family.layer_sizes[0]])
        return np.column_stack([1.0 - p, p])
    if family.kind == "mlp":
        layers = _unpack_mlp(state.params, family.layer_sizes)
        h = x
        for w, b in layers[:-1]:
            h = np.maximum(h @ w + b, 0.0)
        w_out, b_out = layers[-1]
        logits = h @ w_out + b_out
        zmax = logits.max(axis=1, keepdims=True)
        expz = np.exp(logits - zmax)
        return expz / expz.sum(axis=1, keepdims=True)
    raise ParameterError("the linear probe is not a classifier")


def predict(state: ModelState, x: np.ndarray) -> np.ndarray:
    return predict_proba(state, x).argmax(axis=1)


def client_update(
    state: ModelState,
    data: ClientDataset,
    cfg: TrainingConfig,
    anchor: ModelState | None = None,
    rng: np.random.Generator | None = None,
    importance_mode: str = "batch_mean",
) -> tuple[ModelState, float]:
    """Local mini-batch SGD plus an importance score.

    Runs ``cfg.epochs`` passes with a fresh shuffle each, including the
    final partial batch.  The default score is the mean over all training
    mini-batches of the squared gradient norm, accumulated while
    training; ``importance_mode="final_per_sample"`` instead averages
    per-sample squared gradient norms at the final weights (one extra
    pass).  Returns the updated model and the score; the input state is
    left untouched.
    """
    if len(data) == 0:
        raise ParameterError("client dataset is empty")
    if importance_mode not in ("batch_mean", "final_per_sample"):
        raise ParameterError(f"unknown importance mode {importance_mode!r}")
    if rng is None:
        rng = derive_rng(cfg.seed, "client-update", data.client_id)

    x, y = data.features, data.labels
    n = len(y)
    current = state.copy()
    sq_norms: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grad = loss_and_grad(current, x[idx], y[idx], anchor, cfg.prox_mu)
            with np.errstate(over="ignore", invalid="ignore"):
                sq = float(grad @ grad)
                current.params -= cfg.learning_rate * grad
            if (
                not math.isfinite(loss)
                or not math.isfinite(sq)
                or not np.isfinite(current.params).all()
            ):
                raise NumericError("local training diverged", client_id=data.client_id)
            sq_norms.append(sq)

    if importance_mode == "batch_mean":
        importance = math.fsum(sq_norms) / len(sq_norms)
    else:
        per_sample = []
        for i in range(n):
            _, grad = loss_and_grad(current, x[i:i + 1], y[i:i + 1], anchor, cfg.prox_mu)
            per_sample.append(float(grad @ grad))
        importance = math.fsum(per_sample) / n
    return ModelState(current.params, state.family, state.l2), importance


def average_models(models: list[ModelState]) -> ModelState:
    """Elementwise mean of parameter vectors; needs no client sizes."""
    if not models:
        raise ParameterError("cannot average zero models")
    family = models[0].family
    if any(m.family != family for m in models):
        raise ConsistencyError("cannot average models from different families")
    stacked = np.stack([m.params for m in models])
    return ModelState(params=stacked.mean(axis=0), family=family, l2=models[0].l2)


def weighted_average_models(
    models: list[ModelState], weights: np.ndarray | list[float]
) -> ModelState:
    """Average with weights proportional to client sizes."""
    if not models:
        raise ParameterError("cannot average zero models")
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(models):
        raise ConsistencyError("one weight per model required")
    if (weights < 0).any():
        raise ParameterError("weights must be nonnegative")
    total = weights.sum()
    if total == 0:
        raise ParameterError("weights must not all be zero")
    family = models[0].family
    if any(m.family != family for m in models):
        raise ConsistencyError("cannot average models from different families")
    stacked = np.stack([m.params for m in models])
    params = (weights / total) @ stacked
    return ModelState(params=params, family=family, l2=models[0].l2)


def save_checkpoint(state: ModelState, path) -> None:
    """One file per checkpoint: a JSON header line, then the raw
    little-endian float64 parameter bytes.  Written atomically."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "family": state.family.to_dict(),
        "l2": state.l2,
        "n_params": int(len(state.params)),
    }
    payload = (
        json.dumps(header, sort_keys=True).encode("utf-8")
        + b"\n"
        + state.params.astype("<f8").tobytes()
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ConsistencyError(f"{path} is not a model checkpoint")
    params = np.frombuffer(raw[newline + 1:], dtype="<f8").astype(np.float64)
    if len(params) != header["n_params"]:
        raise ConsistencyError(f"{path}: truncated parameter payload")
    return ModelState(
        params=params,
        family=ModelFamily.from_dict(header["family"]),
        l2=float(header.get("l2", 0.0)),
    )
