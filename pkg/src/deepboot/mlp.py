"""Dense ReLU network with hand-written backprop and Adam.

The network maps a row ``[t, y, x]`` to a vector of size ``d_Y``. Hidden
layers use the rectifier, the output layer is affine. Everything runs in
float64. Inputs may be a single vector or a batch of rows; ``backward`` always
returns gradients of the *sum* over the batch of ``output_grad . forward``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError

CHECKPOINT_MAGIC = "DEEPBOOT-NET"
CHECKPOINT_VERSION = 1


@dataclass
class MlpScoreNet:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        _check_sizes(self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need one weight matrix and one bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[i + 1], self.layer_sizes[i]):
                raise ShapeError(f"layer {i}: weight shape {w.shape} does not match sizes")
            if b.shape != (self.layer_sizes[i + 1],):
                raise ShapeError(f"layer {i}: bias shape {b.shape} does not match sizes")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> MlpScoreNet:
        return MlpScoreNet(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())

    def __call__(self, inputs: np.ndarray) -> np.ndarray:
        return forward(self, inputs)


class Gradients(NamedTuple):
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: MlpScoreNet, lr: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
        if lr < 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        return cls(
            m=[np.zeros_like(p) for p in net.params()],
            v=[np.zeros_like(p) for p in net.params()],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def _check_sizes(layer_sizes) -> None:
    if len(layer_sizes) < 2:
        raise ConfigError("layer_sizes needs at least an input and an output size")
    if any(int(s) != s or s <= 0 for s in layer_sizes):
        raise ConfigError(f"layer sizes must be positive integers, got {layer_sizes}")


def init_net(layer_sizes: list[int], seed: int | np.random.Generator) -> MlpScoreNet:
    """He fan-in initialization: weights ~ N(0, 2/fan_in), biases zero."""
    _check_sizes(layer_sizes)
    sizes = [int(s) for s in layer_sizes]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpScoreNet(sizes, weights, biases)


def _as_batch(net: MlpScoreNet, inputs) -> tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise ShapeError(f"expected input width {net.layer_sizes[0]}, got shape {np.shape(inputs)}")
    return x, single


def forward_cached(net: MlpScoreNet, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batch forward pass that also returns each layer's input activation."""
    acts = [x]
    h = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return h, acts


def backward_cached(net: MlpScoreNet, acts: list[np.ndarray], out_grad: np.ndarray) -> Gradients:
    g = out_grad
    gw: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    for i in range(net.n_layers - 1, -1, -1):
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        if i > 0:
            # acts[i] = relu(pre); subgradient at 0 is 0
            g = (g @ net.weights[i]) * (acts[i] > 0.0)
    return Gradients(gw, gb)


def forward(net: MlpScoreNet, inputs) -> np.ndarray:
    x, single = _as_batch(net, inputs)
    out, _ = forward_cached(net, x)
    return out[0] if single else out


def backward(net: MlpScoreNet, inputs, output_grad) -> Gradients:
    """Gradient of ``sum(output_grad * forward(net, inputs))`` w.r.t. every parameter."""
    x, single = _as_batch(net, inputs)
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :] if g.ndim == 1 else g
    if g.shape != (x.shape[0], net.layer_sizes[-1]):
        raise ShapeError(f"output_grad shape {np.shape(output_grad)} does not match forward output")
    _, acts = forward_cached(net, x)
    return backward_cached(net, acts, g)


def adam_step(net: MlpScoreNet, grads: Gradients, state: AdamState) -> tuple[MlpScoreNet, AdamState]:
    """One bias-corrected Adam update, applied in place. Returns ``(net, state)``."""
    params = net.params()
    gparams = grads.params()
    if len(gparams) != len(params) or any(g.shape != p.shape for g, p in zip(gparams, params)):
        raise ShapeError("gradient shapes do not match the network")
    if not all(np.isfinite(g).all() for g in gparams):
        raise TrainingError(f"non-finite gradient at Adam step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, gparams, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def net_to_dict(net: MlpScoreNet) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(d: dict) -> MlpScoreNet:
    return MlpScoreNet(
        [int(s) for s in d["layer_sizes"]],
        [np.asarray(w, dtype=np.float64).reshape(o, i)
         for w, i, o in zip(d["weights"], d["layer_sizes"][:-1], d["layer_sizes"][1:])],
        [np.asarray(b, dtype=np.float64) for b in d["biases"]],
    )


def save_checkpoint(path: str | Path, net: MlpScoreNet, extra: dict | None = None) -> None:
    """Write ``MAGIC VERSION`` on the first line, then one JSON document.

    JSON floats are written with ``repr`` so every double round-trips exactly.
    Weights are nested row-major lists. ``extra`` carries the standardization
    state and any metadata the caller wants next to the net.
    """
    body = {"net": net_to_dict(net), **(extra or {})}
    with open(path, "w") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        json.dump(body, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[MlpScoreNet, dict]:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a network checkpoint")
        if int(header[1]) != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {header[1]}")
        body = json.load(fh)
    net = net_from_dict(body.pop("net"))
    return net, body
