"""Fully connected classifier over a flat parameter vector.

Every model in the simulator is a ``MlpModel``: a tuple of layer widths plus a
single float64 vector holding all weights and biases. Clients, the server and
the attacker only ever exchange that vector, so flatten/unflatten must be an
exact bijection.

Layout of the flat vector, layer by layer: ``W`` (in x out, row-major) then
``b`` (out). Hidden layers use ReLU, the head is a softmax, and the loss is
mean cross-entropy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .rng import RngStream, as_generator


def param_count(layer_dims) -> int:
    dims = list(layer_dims)
    return int(sum(a * b + b for a, b in zip(dims[:-1], dims[1:])))


def _layer_slices(layer_dims):
    out = []
    pos = 0
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        w = slice(pos, pos + a * b)
        pos += a * b
        bias = slice(pos, pos + b)
        pos += b
        out.append((w, bias, a, b))
    return out


@dataclass
class MlpModel:
    layer_dims: tuple[int, ...]
    params: np.ndarray

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise InvalidInput(f"layer_dims must list >= 2 positive widths, got {self.layer_dims}")
        self.params = np.asarray(self.params, dtype=np.float64)
        r = param_count(self.layer_dims)
        if self.params.shape != (r,):
            raise InvalidInput(f"expected {r} parameters for {self.layer_dims}, got shape {self.params.shape}")

    @classmethod
    def zeros(cls, layer_dims) -> "MlpModel":
        return cls(tuple(layer_dims), np.zeros(param_count(layer_dims)))

    @classmethod
    def uniform(cls, layer_dims, rng, scale: float = 0.05) -> "MlpModel":
        gen = as_generator(rng)
        return cls(tuple(layer_dims), gen.uniform(-scale, scale, size=param_count(layer_dims)))

    @property
    def r(self) -> int:
        return self.params.size

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def with_params(self, params: np.ndarray) -> "MlpModel":
        return MlpModel(self.layer_dims, params)

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_dims, self.params.copy())

    def unflatten(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` per layer into ``params`` (writes go through)."""
        return [(self.params[w].reshape(a, b), self.params[bias])
                for w, bias, a, b in _layer_slices(self.layer_dims)]


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def _check_batch(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise InvalidInput(f"batch width {x.shape[-1]} does not match input width {model.layer_dims[0]}")
    return x


def logits(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = _check_batch(model, x)
    layers = model.unflatten()
    h = x
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = layers[-1]
    return h @ W + b


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per sample."""
    return softmax(logits(model, x))


def _loss_grad_into(layers, grad_layers, x, y):
    # forward, keeping activations
    acts = [x]
    h = x
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    W, b = layers[-1]
    z = h @ W + b
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sz = ez.sum(axis=1, keepdims=True)
    n = x.shape[0]
    rows = np.arange(n)
    loss = float(np.mean(np.log(sz[:, 0]) - z[rows, y]))
    delta = ez / sz
    delta[rows, y] -= 1.0
    delta /= n
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        gW, gb = grad_layers[i]
        np.matmul(acts[i].T, delta, out=gW)
        np.sum(delta, axis=0, out=gb)
        if i:
            delta = delta @ W.T
            delta *= acts[i] > 0
    return loss


def loss_grad(model: MlpModel, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the flat parameter vector."""
    x = _check_batch(model, x)
    y = np.asarray(y, dtype=np.int64).ravel()
    if x.shape[0] == 0:
        raise InvalidInput("empty batch")
    if y.shape[0] != x.shape[0]:
        raise InvalidInput("features and labels have different lengths")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise InvalidInput("label outside [0, n_classes)")
    grad = MlpModel.zeros(model.layer_dims)
    loss = _loss_grad_into(model.unflatten(), grad.unflatten(), x, y)
    return loss, grad.params


def local_train(model: MlpModel, shard, epochs: int, batch_size: int, lr: float,
                rng: RngStream | np.random.Generator) -> MlpModel:
    """Plain minibatch SGD (no momentum, no weight decay) on one shard.

    Each epoch visits the shard in a fresh permutation drawn from ``rng``; the
    last batch of an epoch may be short.
    """
    if epochs < 1 or batch_size < 1:
        raise InvalidInput("epochs and batch_size must be >= 1")
    if lr < 0:
        raise InvalidInput("lr must be non-negative")
    n = len(shard)
    if n == 0:
        raise InvalidInput("cannot train on an empty shard")
    x_all = _check_batch(model, shard.features)
    y_all = np.asarray(shard.labels, dtype=np.int64)
    gen = as_generator(rng)
    out = model.copy()
    layers = out.unflatten()
    grad = MlpModel.zeros(model.layer_dims)
    grad_layers = grad.unflatten()
    for _ in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _loss_grad_into(layers, grad_layers, x_all[idx], y_all[idx])
            out.params -= lr * grad.params
    return out


def predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class id
    return np.argmax(logits(model, x), axis=1)


def evaluate_accuracy(model: MlpModel, test) -> float:
    if len(test) == 0:
        raise InvalidInput("empty test set")
    return float(np.mean(predict(model, test.features) == np.asarray(test.labels)))
