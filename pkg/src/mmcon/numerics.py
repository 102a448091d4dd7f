"""Small MLP encoder with hand-written backprop, plain SGD, and a
central-difference gradient checker.

All arrays are float64.  Weight matrices are stored ``(out, in)`` so a
layer computes ``h @ W.T + b`` on row-major batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateEmbedding, DimensionMismatch, NonFiniteLoss, ValidationError

ACTIVATIONS = ("relu", "tanh")
NORM_EPS = 1e-12


@dataclass
class EncoderParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    normalize_output: bool = True

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionMismatch("need one bias per weight matrix and at least one layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionMismatch(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer emits "
                    f"{self.weights[i - 1].shape[0]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i} has non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.normalize_output,
        )

    def flat(self) -> np.ndarray:
        """All parameters as one vector, layer by layer (W then b)."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, theta: np.ndarray) -> "EncoderParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.size:
            raise DimensionMismatch(f"expected {self.size} parameters, got {theta.size}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return EncoderParams(weights, biases, self.activation, self.normalize_output)

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def same_shape(self, other: "EncoderParams") -> bool:
        return len(self.weights) == len(other.weights) and all(
            a.shape == b.shape for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )

    def __eq__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        return (
            self.activation == other.activation
            and self.normalize_output == other.normalize_output
            and self.same_shape(other)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass
class GradCheckReport:
    max_relative_error: float
    errors: np.ndarray
    numeric: np.ndarray = field(repr=False)
    analytic: np.ndarray = field(repr=False)


def init_encoder(
    layer_dims: Sequence[int],
    activation: str = "relu",
    normalize_output: bool = True,
    seed=0,
) -> EncoderParams:
    """Glorot-uniform weights, zero biases.

    ``layer_dims`` lists input, hidden and output sizes, e.g. ``(16, 32, 8)``.
    """
    if len(layer_dims) < 2 or any(int(d) <= 0 for d in layer_dims):
        raise ValidationError(f"bad layer dims {tuple(layer_dims)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights, biases, activation, normalize_output)


def _act(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    return np.tanh(x)


def _act_grad(name, pre, post):
    if name == "relu":
        return (pre > 0).astype(np.float64)
    return 1.0 - post * post


def _forward(params: EncoderParams, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionMismatch(f"input has shape {x.shape}, encoder expects {params.input_dim} features")
    cache = [X]
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = h @ w.T + b
        h = pre if i == last else _act(params.activation, pre)
        cache.append((pre, h))
    raw = h
    norms = None
    if params.normalize_output:
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms < NORM_EPS):
            raise DegenerateEmbedding("encoder output has near-zero norm; cannot normalize")
        out = raw / norms
    else:
        out = raw
    return out, single, cache, norms


def encoder_forward(params: EncoderParams, x) -> np.ndarray:
    """Embed one input vector or a batch of row vectors.

    Hidden layers use ``params.activation``; the output layer is affine.
    With ``normalize_output`` each output row has unit L2 norm.
    """
    out, single, _, _ = _forward(params, x)
    return out[0] if single else out


def encoder_backward(params: EncoderParams, x, upstream_grad):
    """Gradient of ``sum(upstream_grad * encoder_forward(params, x))``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is an
    :class:`EncoderParams` holding dL/dW and dL/db summed over the batch.
    """
    out, single, cache, norms = _forward(params, x)
    g = np.atleast_2d(np.asarray(upstream_grad, dtype=np.float64))
    if g.shape != out.shape:
        raise DimensionMismatch(f"upstream gradient {np.shape(upstream_grad)} vs output {out.shape}")
    if params.normalize_output:
        # d(r/|r|) = (I - z z^T) / |r|
        g = (g - np.sum(g * out, axis=1, keepdims=True) * out) / norms
    dws = [None] * len(params.weights)
    dbs = [None] * len(params.weights)
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        pre, post = cache[i + 1]
        if i != last:
            g = g * _act_grad(params.activation, pre, post)
        h_in = cache[0] if i == 0 else cache[i][1]
        dws[i] = g.T @ h_in
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    grads = EncoderParams(dws, dbs, params.activation, params.normalize_output)
    return grads, (g[0] if single else g)


def sgd_step(params: EncoderParams, grads: EncoderParams, learning_rate: float) -> EncoderParams:
    if learning_rate < 0 or not np.isfinite(learning_rate):
        raise ValidationError(f"learning rate must be a finite non-negative number, got {learning_rate}")
    if not params.same_shape(grads):
        raise DimensionMismatch("gradient shapes do not match parameter shapes")
    return EncoderParams(
        [w - learning_rate * g for w, g in zip(params.weights, grads.weights)],
        [b - learning_rate * g for b, g in zip(params.biases, grads.biases)],
        params.activation,
        params.normalize_output,
    )


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))


def numeric_gradient(loss_fn: Callable[[np.ndarray], float], theta, step: float = 1e-5) -> np.ndarray:
    theta = np.array(theta, dtype=np.float64)
    if not 1e-7 <= step <= 1e-3:
        raise ValidationError(f"finite-difference step {step} outside [1e-7, 1e-3]")
    grad = np.empty(theta.size)
    flat = theta.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        fp = float(loss_fn(theta))
        flat[j] = orig - step
        fm = float(loss_fn(theta))
        flat[j] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteLoss(f"loss is not finite when perturbing coordinate {j}")
        grad[j] = (fp - fm) / (2.0 * step)
    return grad.reshape(theta.shape)


def finite_difference_check(loss_fn, params, analytic_grad, step: float = 1e-5) -> GradCheckReport:
    """Compare an analytic gradient with central differences of ``loss_fn``.

    ``params`` is a flat parameter vector (use :meth:`EncoderParams.flat`
    for encoders); ``loss_fn`` maps such a vector to a scalar.
    """
    numeric = numeric_gradient(loss_fn, params, step)
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(numeric.shape)
    errs = relative_error(analytic, numeric).ravel()
    return GradCheckReport(float(errs.max()) if errs.size else 0.0, errs, numeric, analytic)
