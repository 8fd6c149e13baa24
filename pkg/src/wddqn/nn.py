"""Dense feed-forward Q-value / reward approximator trained with MSE and Adam.

Hidden layers use a rectifier, the output layer is linear. Weights are stored
``(fan_in, fan_out)`` so a forward pass is ``x @ W + b`` row-wise.

Checkpoint format (little-endian throughout)::

    magic     4 bytes  b"DNET"
    version   uint32   1
    n_sizes   uint32   number of layer sizes L
    sizes     uint32 * L
    then for each layer k = 0..L-2:
        W_k   float64 * sizes[k] * sizes[k+1]   row-major
        b_k   float64 * sizes[k+1]
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"DNET"
_VERSION = 1


@dataclass
class DenseNet:
    """Parameters live in one flat buffer; ``weights``/``biases`` are views into it."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        pairs = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        if len(self.weights) != len(pairs) or len(self.biases) != len(pairs):
            raise ValueError("layer count does not match layer_sizes")
        self.flat = np.empty(_n_params(self.layer_sizes))
        ws, bs = _views(self.flat, self.layer_sizes)
        for dst, src in zip(ws + bs, list(self.weights) + list(self.biases)):
            if dst.shape != np.shape(src):
                raise ValueError(f"parameter shape {np.shape(src)} != {dst.shape}")
            dst[...] = src
        self.weights, self.biases = ws, bs

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """Parameter views in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __call__(self, x):
        return forward(self, x)


def _n_params(sizes) -> int:
    return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))


def _views(flat: np.ndarray, sizes):
    """Split a flat buffer into per-layer weight and bias views (W0, b0, W1, ... order)."""
    ws, bs = [], []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        ws.append(flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
        offset += fan_in * fan_out
        bs.append(flat[offset:offset + fan_out])
        offset += fan_out
    return ws, bs


class AdamState:
    """Adam moment accumulators over a network's flat parameter buffer."""

    def __init__(self, n_params: int, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self._tmp = np.empty(n_params)

    @classmethod
    def for_net(cls, net: DenseNet, lr: float = 1e-4, **kwargs) -> "AdamState":
        return cls(net.flat.size, lr=lr, **kwargs)

    def apply(self, params: np.ndarray, grads: np.ndarray) -> None:
        """One in-place Adam step on the flat ``params`` buffer."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        m, v, tmp = self.m, self.v, self._tmp
        m *= self.beta1
        np.multiply(grads, 1.0 - self.beta1, out=tmp)
        m += tmp
        v *= self.beta2
        np.multiply(grads, grads, out=tmp)
        tmp *= 1.0 - self.beta2
        v += tmp
        # m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in
        np.sqrt(v, out=tmp)
        tmp *= 1.0 / np.sqrt(c2)
        tmp += self.epsilon
        np.divide(m, tmp, out=tmp)
        tmp *= self.lr / c1
        params -= tmp


@dataclass
class Batch:
    inputs: np.ndarray
    action_indices: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.action_indices = np.asarray(self.action_indices, dtype=np.intp).reshape(-1)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        n = len(self.inputs)
        if len(self.action_indices) != n or len(self.targets) != n:
            raise ValueError("inputs, action_indices and targets differ in length")


def net_init(layer_sizes, rng: np.random.Generator) -> DenseNet:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {layer_sizes!r}")
    weights, biases = [], []
    n_layers = len(sizes) - 1
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        # He scaling feeds rectifier layers; the linear head gets 1/fan_in
        var = 1.0 / fan_in if k == n_layers - 1 else 2.0 / fan_in
        weights.append(rng.normal(0.0, np.sqrt(var), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(sizes, weights, biases)


def _check_input(net: DenseNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.layer_sizes[0]:
        raise ValueError(f"input dimension {x.shape[-1]} != {net.layer_sizes[0]}")
    return x


def forward(net: DenseNet, x) -> np.ndarray:
    """Output values for a vector (-> vector) or a matrix of rows (-> matrix)."""
    h = _check_input(net, x)
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def loss_and_grads(net: DenseNet, batch: Batch) -> tuple[float, list[np.ndarray]]:
    """MSE on the selected-action outputs and its gradient per parameter
    (same order as ``net.parameters()``)."""
    loss, flat_grad, _ = _backprop(net, batch)
    ws, bs = _views(flat_grad, net.layer_sizes)
    return loss, [g for pair in zip(ws, bs) for g in pair]


def _backprop(net: DenseNet, batch: Batch):
    """Loss, flat gradient buffer and pre-update predictions."""
    x = _check_input(net, batch.inputs)
    n = len(x)
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if k < last:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    rows = np.arange(n)
    preds = h[rows, batch.action_indices]
    err = batch.targets - preds
    loss = float(np.dot(err, err) / n) if n else 0.0

    flat_grad = np.empty_like(net.flat)
    gws, gbs = _views(flat_grad, net.layer_sizes)
    g = np.zeros_like(h)
    g[rows, batch.action_indices] = -2.0 * err / n
    for k in range(last, -1, -1):
        np.matmul(acts[k].T, g, out=gws[k])
        np.sum(g, axis=0, out=gbs[k])
        if k > 0:
            g = g @ net.weights[k].T
            g *= acts[k] > 0.0
    return loss, flat_grad, preds


def train_batch(net: DenseNet, batch: Batch, adam: AdamState, return_predictions: bool = False):
    """One Adam step on the batch; returns the loss before the update.

    With ``return_predictions`` also returns the pre-update Q(s, a) values.
    """
    if not np.all(np.isfinite(batch.targets)):
        raise ValueError("non-finite regression targets")
    if batch.action_indices.size and (batch.action_indices.min() < 0
                                      or batch.action_indices.max() >= net.n_outputs):
        raise ValueError("action index outside network output range")
    loss, grads, preds = _backprop(net, batch)
    adam.apply(net.flat, grads)
    return (loss, preds) if return_predictions else loss


def copy_params(source: DenseNet, destination: DenseNet) -> None:
    if source.layer_sizes != destination.layer_sizes:
        raise ValueError(f"shape mismatch {source.layer_sizes} vs {destination.layer_sizes}")
    if source is destination:
        return
    destination.flat[...] = source.flat


def finite_diff_check(net: DenseNet, x, action_index: int, target: float,
                      h: float = 1e-5) -> float:
    """Max relative error between backprop and central-difference gradients.

    Relative error per parameter is ``|a - n| / max(|a|, |n|, 1e-8)``. The
    network is restored exactly after each perturbation.
    """
    if h <= 0:
        raise ValueError("perturbation h must be positive")
    batch = Batch(np.atleast_2d(x), [action_index], [target])
    _, grads, _ = _backprop(net, batch)

    def loss_at() -> float:
        out = forward(net, batch.inputs)[0, action_index]
        return float((target - out) ** 2)

    worst = 0.0
    flat = net.flat
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_at()
        flat[i] = orig - h
        down = loss_at()
        flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        analytic = grads[i]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def save_params(net: DenseNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(net.layer_sizes)))
        fh.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path) -> DenseNet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a DenseNet checkpoint")
    version, n = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    sizes = struct.unpack_from(f"<{n}I", data, offset)
    offset += 4 * n
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out))
        biases.append(b)
    if offset != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return DenseNet(tuple(sizes), weights, biases)
