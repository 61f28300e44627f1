"""Minimal feed-forward network engine with reverse-mode gradients.

Networks are immutable: ``apply_grads`` returns a new ``Mlp`` and frozen
layers keep their exact parameter arrays.  ``forward`` records a one-shot
``GradTape``; ``backward`` consumes it against a loss head, while
``backward_from`` consumes it against an upstream output gradient so that
several networks can be chained (encoder -> decoder -> frozen task module).

Batches are row-major: shape (samples, features).
"""

from dataclasses import dataclass, field

import struct

import numpy as np

from .errors import (
    IndexOutOfRange,
    ShapeMismatch,
    StaleTape,
    TargetMismatch,
)

ACTIVATIONS = ("identity", "relu", "tanh")
MEAN_SQUARED_ERROR = "mean_squared_error"
SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"
LOSS_KINDS = (MEAN_SQUARED_ERROR, SOFTMAX_CROSS_ENTROPY)


@dataclass(frozen=True)
class DenseLayer:
    weights: np.ndarray           # out x in
    bias: np.ndarray              # out
    activation: str = "identity"

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeMismatch("weights must be 2-D")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(
                f"bias length {self.bias.shape} does not match {self.weights.shape[0]} outputs")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class Mlp:
    layers: tuple
    frozen: tuple

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ShapeMismatch("network needs at least one layer")
        if len(self.frozen) != len(self.layers):
            raise ShapeMismatch("one frozen flag per layer required")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeMismatch(
                    f"layer chain broken: {prev.out_dim} outputs feed {nxt.in_dim} inputs")

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim


@dataclass
class GradTape:
    """Per-layer inputs and pre-activations from one forward pass."""

    net: Mlp
    inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)
    consumed: bool = False


def init_mlp(sizes, activations, seed, frozen=False):
    """Fan-balanced uniform init: entries in +-sqrt(6 / (fan_in + fan_out))."""
    if len(activations) != len(sizes) - 1:
        raise ShapeMismatch("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append(DenseLayer(weights=w, bias=b, activation=act))
    return Mlp(layers=tuple(layers), frozen=tuple(bool(frozen) for _ in layers))


def freeze(net: Mlp, flag=True) -> Mlp:
    return Mlp(layers=net.layers, frozen=tuple(flag for _ in net.layers))


def param_count(net: Mlp) -> int:
    return sum(l.weights.size + l.bias.size for l in net.layers)


def _activate(z, kind):
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z, kind):
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def forward(net: Mlp, x_batch):
    """Run the network on a (samples, features) batch; returns (outputs, tape)."""
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeMismatch(f"batch shape {x.shape}, expected (*, {net.in_dim})")
    tape = GradTape(net=net)
    h = x
    for layer in net.layers:
        tape.inputs.append(h)
        z = h @ layer.weights.T + layer.bias
        tape.preacts.append(z)
        h = _activate(z, layer.activation)
    return h, tape


def softmax(logits):
    z = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def loss_and_grad(kind, outputs, targets):
    """Mean batch loss and its gradient w.r.t. *outputs*."""
    n = outputs.shape[0]
    if kind == MEAN_SQUARED_ERROR:
        t = np.asarray(targets, dtype=np.float64)
        if t.ndim == 1 and t.shape[0] == n * outputs.shape[1]:
            t = t.reshape(outputs.shape)
        if t.shape != outputs.shape:
            raise TargetMismatch(
                f"mse targets shape {t.shape}, outputs shape {outputs.shape}")
        res = outputs - t
        loss = float(np.sum(res * res) / n)
        return loss, 2.0 * res / n
    if kind == SOFTMAX_CROSS_ENTROPY:
        t = np.asarray(targets)
        if not np.issubdtype(t.dtype, np.integer) or t.shape != (n,):
            raise TargetMismatch("softmax_cross_entropy requires integer class targets")
        if t.min() < 0 or t.max() >= outputs.shape[1]:
            raise TargetMismatch("class target out of range")
        p = softmax(outputs)
        loss = float(-np.mean(np.log(p[np.arange(n), t] + 1e-300)))
        grad = p.copy()
        grad[np.arange(n), t] -= 1.0
        return loss, grad / n
    raise TargetMismatch(f"unknown loss kind {kind!r}")


def backward_from(net: Mlp, tape: GradTape, d_outputs):
    """Backpropagate an output gradient; returns (d_inputs, per-layer grads).

    Gradients are produced for every layer, frozen or not; whether they get
    applied is the caller's business (``apply_grads`` skips frozen layers).
    """
    if tape.consumed:
        raise StaleTape("tape already consumed by a backward pass")
    if tape.net is not net:
        raise StaleTape("tape was produced by a different network")
    tape.consumed = True
    grads = [None] * len(net.layers)
    d = np.asarray(d_outputs, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        dz = d * _activate_grad(tape.preacts[i], layer.activation)
        grads[i] = (dz.T @ tape.inputs[i], dz.sum(axis=0))
        d = dz @ layer.weights
    return d, grads


def backward(net: Mlp, tape: GradTape, loss_kind, targets):
    """Mean batch loss and per-layer (dW, db) against a loss head."""
    outputs = _activate(tape.preacts[-1], net.layers[-1].activation) if tape.preacts else None
    if outputs is None:
        raise StaleTape("empty tape")
    loss, d_out = loss_and_grad(loss_kind, outputs, targets)
    _, grads = backward_from(net, tape, d_out)
    return loss, grads


def apply_grads(net: Mlp, grads, learning_rate: float) -> Mlp:
    """New network stepped by -lr * grad; frozen layers keep their arrays."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if len(grads) != len(net.layers):
        raise ShapeMismatch("one gradient pair per layer required")
    new_layers = []
    for layer, is_frozen, g in zip(net.layers, net.frozen, grads):
        if is_frozen or g is None:
            new_layers.append(layer)
            continue
        dw, db = g
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ShapeMismatch("gradient shape does not match layer")
        new_layers.append(DenseLayer(
            weights=layer.weights - learning_rate * dw,
            bias=layer.bias - learning_rate * db,
            activation=layer.activation,
        ))
    return Mlp(layers=tuple(new_layers), frozen=net.frozen)


def clip_grads(grads, max_norm):
    """Scale all gradients down so their joint L2 norm is at most max_norm."""
    if max_norm is None or max_norm <= 0:
        return grads
    total = 0.0
    for g in grads:
        if g is None:
            continue
        dw, db = g
        total += float(np.sum(dw * dw) + np.sum(db * db))
    norm = np.sqrt(total)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [None if g is None else (g[0] * scale, g[1] * scale) for g in grads]


def split_at(net: Mlp, block_index: int):
    """Split into (head, tail) so composing them reproduces the network exactly."""
    if not 0 < block_index < len(net.layers):
        raise IndexOutOfRange(
            f"block index {block_index} outside (0, {len(net.layers)})")
    head = Mlp(layers=net.layers[:block_index], frozen=net.frozen[:block_index])
    tail = Mlp(layers=net.layers[block_index:], frozen=net.frozen[block_index:])
    return head, tail


# ---------------------------------------------------------------------------
# Serialization: versioned little-endian binary container.
#
#   magic "TNET" | u32 version (=1) | u32 layer count | per layer:
#   u32 out | u32 in | u8 activation tag | u8 frozen flag |
#   f64[out*in] weights row-major | f64[out] bias
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"TNET"
MODEL_VERSION = 1
_ACT_TAGS = {"identity": 0, "relu": 1, "tanh": 2}
_TAG_ACTS = {v: k for k, v in _ACT_TAGS.items()}


def mlp_to_bytes(net: Mlp) -> bytes:
    out = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(net.layers))]
    for layer, is_frozen in zip(net.layers, net.frozen):
        out.append(struct.pack("<IIBB", layer.out_dim, layer.in_dim,
                               _ACT_TAGS[layer.activation], int(is_frozen)))
        out.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(out)


def mlp_from_bytes(buf: bytes) -> Mlp:
    if buf[:4] != MODEL_MAGIC:
        raise ValueError("not a TNET model container")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    offset = 12
    layers, frozen = [], []
    for _ in range(count):
        out_dim, in_dim, tag, froz = struct.unpack_from("<IIBB", buf, offset)
        offset += 10
        w = np.frombuffer(buf, dtype="<f8", count=out_dim * in_dim, offset=offset)
        offset += out_dim * in_dim * 8
        b = np.frombuffer(buf, dtype="<f8", count=out_dim, offset=offset)
        offset += out_dim * 8
        layers.append(DenseLayer(weights=w.reshape(out_dim, in_dim).copy(),
                                 bias=b.copy(), activation=_TAG_ACTS[tag]))
        frozen.append(bool(froz))
    if offset != len(buf):
        raise ValueError("trailing bytes in model container")
    return Mlp(layers=tuple(layers), frozen=tuple(frozen))


def save_mlp(net: Mlp, path):
    with open(path, "wb") as f:
        f.write(mlp_to_bytes(net))


def load_mlp(path) -> Mlp:
    with open(path, "rb") as f:
        return mlp_from_bytes(f.read())
