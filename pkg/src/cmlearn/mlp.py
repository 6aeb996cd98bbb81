"""Dense PReLU network with hand-written reverse mode and an ADAM optimizer.

Everything is float64. Inputs may be a single vector ``(d,)`` or a batch
``(B, d)``; parameter gradients are summed over the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SLOPE = 0.25


class ShapeError(ValueError):
    """Input or upstream dimension does not match the network."""


class NonFiniteGradientError(FloatingPointError):
    """ADAM refused a step because the gradient has NaN/Inf entries."""


def prelu(x, slope):
    return np.where(x >= 0, x, slope * x)


def prelu_grad(x, slope):
    # x == 0 takes the positive branch
    return np.where(x >= 0, 1.0, slope)


@dataclass
class MlpModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]
    prelu_slopes: list[np.ndarray]  # one per hidden layer, one slope per channel
    seed: int | None = None
    iterations: int = 0

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        n_layers = len(self.layer_sizes) - 1
        if n_layers < 1 or min(self.layer_sizes) < 1:
            raise ShapeError(f"bad layer_sizes {self.layer_sizes}")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("need one weight matrix and bias per layer")
        if len(self.prelu_slopes) != n_layers - 1:
            raise ShapeError("need one slope vector per hidden layer")
        for k in range(n_layers):
            fan_in, fan_out = self.layer_sizes[k], self.layer_sizes[k + 1]
            self.weights[k] = np.asarray(self.weights[k], dtype=np.float64).reshape(fan_out, fan_in)
            self.biases[k] = np.asarray(self.biases[k], dtype=np.float64).reshape(fan_out)
        for k in range(n_layers - 1):
            self.prelu_slopes[k] = np.asarray(self.prelu_slopes[k], dtype=np.float64).reshape(
                self.layer_sizes[k + 1]
            )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases)) + sum(
            a.size for a in self.prelu_slopes
        )

    def copy(self) -> MlpModel:
        return MlpModel(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [a.copy() for a in self.prelu_slopes],
            seed=self.seed,
            iterations=self.iterations,
        )

    # Flat layout: W0, b0, W1, b1, ..., then every slope vector in order.
    def get_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        parts += list(self.prelu_slopes)
        return np.concatenate(parts)

    def set_params(self, theta) -> MlpModel:
        """Return a new model carrying the flat parameter vector ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.shape}")
        out = self.copy()
        i = 0
        for k in range(len(out.weights)):
            n = out.weights[k].size
            out.weights[k] = theta[i : i + n].reshape(out.weights[k].shape).copy()
            i += n
            n = out.biases[k].size
            out.biases[k] = theta[i : i + n].copy()
            i += n
        for k in range(len(out.prelu_slopes)):
            n = out.prelu_slopes[k].size
            out.prelu_slopes[k] = theta[i : i + n].copy()
            i += n
        return out

    def predict(self, x):
        return forward(self, x)

    def input_vjp(self, x, upstream):
        return backward(self, x, upstream, param_grads=False)[1]


def init_mlp(layer_sizes, seed: int = 0, slope: float = DEFAULT_SLOPE) -> MlpModel:
    """He-uniform init scaled for PReLU with the given negative slope; zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases, slopes = [], [], []
    n_layers = len(layer_sizes) - 1
    for k in range(n_layers):
        fan_in, fan_out = layer_sizes[k], layer_sizes[k + 1]
        gain = 1.0 + slope**2 if k > 0 else 1.0
        limit = np.sqrt(6.0 / (gain * fan_in))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        if k < n_layers - 1:
            slopes.append(np.full(fan_out, slope))
    return MlpModel(list(layer_sizes), weights, biases, slopes, seed=seed)


def _as_batch(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != width:
        raise ShapeError(f"{what} has shape {x.shape}, expected trailing dimension {width}")
    return xb, single


def _forward_cache(model: MlpModel, xb):
    pre = []
    h = xb
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        if k < last:
            pre.append((h, z))
            h = prelu(z, model.prelu_slopes[k])
        else:
            pre.append((h, None))
            h = z
    return h, pre


def forward(model: MlpModel, x):
    xb, single = _as_batch(x, model.n_inputs, "input")
    y, _ = _forward_cache(model, xb)
    return y[0] if single else y


def backward(model: MlpModel, x, upstream, param_grads: bool = True):
    """Gradient of ``sum(upstream * forward(model, x))``.

    Returns ``(theta_grad, input_grad)``. ``theta_grad`` follows the layout of
    ``MlpModel.get_params`` (or is None when ``param_grads`` is False) and
    ``input_grad`` has the shape of ``x``.
    """
    xb, single = _as_batch(x, model.n_inputs, "input")
    ub = np.asarray(upstream, dtype=np.float64)
    ub = ub[None, :] if ub.ndim == 1 else ub
    if ub.shape != (xb.shape[0], model.n_outputs):
        raise ShapeError(f"upstream has shape {np.shape(upstream)}, expected {model.n_outputs} outputs per row")
    _, cache = _forward_cache(model, xb)

    n_layers = len(model.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    da = [None] * (n_layers - 1)
    g = ub
    for k in range(n_layers - 1, -1, -1):
        h_in, _ = cache[k]
        if param_grads:
            dW[k] = g.T @ h_in
            db[k] = g.sum(axis=0)
        g = g @ model.weights[k]
        if k > 0:
            z = cache[k - 1][1]
            slope = model.prelu_slopes[k - 1]
            if param_grads:
                da[k - 1] = np.where(z < 0, g * z, 0.0).sum(axis=0)
            g = g * prelu_grad(z, slope)
    input_grad = g[0] if single else g
    if not param_grads:
        return None, input_grad
    parts = []
    for w, b in zip(dW, db):
        parts += [w.ravel(), b]
    parts += da
    return np.concatenate(parts), input_grad


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected ADAM update. Inputs are not modified."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError("params, grads and moments must share a shape")
    if state.learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    bad = ~np.isfinite(grads)
    if bad.any():
        raise NonFiniteGradientError(
            f"{int(bad.sum())} non-finite gradient entries (first at index {int(np.argmax(bad))})"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        m, v, t, state.learning_rate, state.beta1, state.beta2, state.eps
    )
    return new_params, new_state


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def checkpoint_dict(model: MlpModel, extra: dict | None = None) -> dict:
    doc = {
        "format": "cmlearn-mlp",
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "prelu_slopes": [a.tolist() for a in model.prelu_slopes],
        "seed": model.seed,
        "iterations": model.iterations,
    }
    if extra:
        doc.update(extra)
    return doc


def model_from_dict(doc: dict) -> MlpModel:
    if doc.get("format") != "cmlearn-mlp":
        raise ValueError("not an MLP checkpoint (missing format tag)")
    return MlpModel(
        doc["layer_sizes"],
        [np.array(w, dtype=np.float64) for w in doc["weights"]],
        [np.array(b, dtype=np.float64) for b in doc["biases"]],
        [np.array(a, dtype=np.float64) for a in doc["prelu_slopes"]],
        seed=doc.get("seed"),
        iterations=int(doc.get("iterations", 0)),
    )


def save_checkpoint(path, model: MlpModel, extra: dict | None = None) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(checkpoint_dict(model, extra), indent=1) + "\n")


def load_checkpoint(path) -> tuple[MlpModel, dict]:
    doc = json.loads(Path(path).read_text())
    return model_from_dict(doc), doc
