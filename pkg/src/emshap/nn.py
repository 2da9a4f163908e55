"""Dense layers, the residual energy MLP and the GRU cell.

All parameters are float64 tensors from :mod:`emshap.autodiff`, so forward
passes double as differentiable graph construction. Fast inference paths
that do not need gradients operate on ``.data`` directly.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor, as_tensor, concat
from .errors import DimensionMismatchError, NumericOverflowError

ACTIVATIONS = ("softplus", "tanh", "identity")


def _activate(x: Tensor, name: str) -> Tensor:
    if name == "softplus":
        return x.softplus()
    if name == "tanh":
        return x.tanh()
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


def _activate_np(x: np.ndarray, name: str) -> np.ndarray:
    if name == "softplus":
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if name == "tanh":
        return np.tanh(x)
    if name == "identity":
        return x
    raise ValueError(f"unknown activation {name!r}")


def _init_matrix(rng: np.random.Generator, out_size: int, in_size: int) -> np.ndarray:
    # uniform scaled by fan-in
    bound = 1.0 / np.sqrt(in_size)
    return rng.uniform(-bound, bound, size=(out_size, in_size))


class DenseLayer:
    """Affine map x -> W x + b with W of shape (out, in)."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise DimensionMismatchError(
                "dense layer", f"(out, in) weights with (out,) bias", f"{weights.shape} / {bias.shape}"
            )
        if not (np.isfinite(weights).all() and np.isfinite(bias).all()):
            raise NumericOverflowError("dense layer parameters must be finite")
        self.w = Tensor(weights, requires_grad=True)
        self.b = Tensor(bias, requires_grad=True)

    @classmethod
    def random(cls, rng: np.random.Generator, in_size: int, out_size: int) -> "DenseLayer":
        return cls(_init_matrix(rng, out_size, in_size), np.zeros(out_size))

    @property
    def in_size(self) -> int:
        return self.w.data.shape[1]

    @property
    def out_size(self) -> int:
        return self.w.data.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return x @ _transpose(self.w) + self.b

    def parameters(self):
        return [self.w, self.b]


def _transpose(t: Tensor) -> Tensor:
    data = t.data.T

    def backward(g):
        if t.requires_grad:
            t._accumulate(g.T)

    return Tensor._make(data, (t,), backward)


class ResidualMlp:
    """MLP with a scalar output and exactly two additive skip connections.

    Architecture for hidden width h: in -> h -> h -> h -> 1, where the
    activation output of hidden block i is added to the pre-activation of
    hidden block i+1 for the pairs in ``skip_connections``.
    """

    def __init__(self, layers: list[DenseLayer], skip_connections=((0, 1), (1, 2)),
                 activation: str = "softplus"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if len(skip_connections) != 2:
            raise ValueError("exactly two skip connections are required")
        for src, dst in skip_connections:
            if layers[src].out_size != layers[dst].out_size:
                raise DimensionMismatchError(
                    f"skip connection {src}->{dst}",
                    layers[dst].out_size,
                    layers[src].out_size,
                )
        if layers[-1].out_size != 1:
            raise DimensionMismatchError("output layer size", 1, layers[-1].out_size)
        self.layers = layers
        self.skip_connections = tuple((int(a), int(b)) for a, b in skip_connections)
        self.activation = activation

    @classmethod
    def create(cls, rng: np.random.Generator, in_size: int, hidden: int,
               activation: str = "softplus") -> "ResidualMlp":
        layers = [
            DenseLayer.random(rng, in_size, hidden),
            DenseLayer.random(rng, hidden, hidden),
            DenseLayer.random(rng, hidden, hidden),
            DenseLayer.random(rng, hidden, 1),
        ]
        return cls(layers, activation=activation)

    @property
    def in_size(self) -> int:
        return self.layers[0].in_size

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward_batch(self, x: Tensor) -> Tensor:
        """Forward a (batch, in) tensor to a (batch,) tensor of energies."""
        if x.shape[-1] != self.in_size:
            raise DimensionMismatchError("mlp input size", self.in_size, x.shape[-1])
        skips = {dst: src for src, dst in self.skip_connections}
        activations: dict[int, Tensor] = {}
        h = x
        for i, layer in enumerate(self.layers[:-1]):
            pre = layer(h)
            if i in skips:
                pre = pre + activations[skips[i]]
            h = _activate(pre, self.activation)
            activations[i] = h
        out = self.layers[-1](h)
        return out.reshape(out.shape[0])


def mlp_forward(net: ResidualMlp, x) -> float:
    """Evaluate the scalar network output for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.in_size,):
        raise DimensionMismatchError("mlp input", (net.in_size,), x.shape)
    out = net.forward_batch(as_tensor(x.reshape(1, -1))).item()
    if not np.isfinite(out):
        raise NumericOverflowError("non-finite value in MLP forward pass")
    return out


class GruCell:
    """Gated recurrent cell, standard three-gate formulation.

    With input x and previous state h:

        z = sigmoid(W_z [x; h] + b_z)          (update gate)
        r = sigmoid(W_r [x; h] + b_r)          (reset gate)
        n = tanh(W_n [x; r * h] + b_n)         (candidate state)
        h' = (1 - z) * h + z * n

    This formulation is fixed; zero parameters give h' = h / 2.
    """

    def __init__(self, input_size: int, hidden_size: int,
                 w_z=None, w_r=None, w_n=None, b_z=None, b_r=None, b_n=None,
                 rng: np.random.Generator | None = None):
        self.input_size = int(input_size)
        self.hidden_size = int(hidden_size)
        total = self.input_size + self.hidden_size
        if rng is None and w_z is None:
            rng = np.random.default_rng(0)

        def mat(m):
            if m is None:
                return Tensor(_init_matrix(rng, self.hidden_size, total), requires_grad=True)
            m = np.asarray(m, dtype=np.float64)
            if m.shape != (self.hidden_size, total):
                raise DimensionMismatchError("gate matrix", (self.hidden_size, total), m.shape)
            return Tensor(m, requires_grad=True)

        def vec(v):
            if v is None:
                return Tensor(np.zeros(self.hidden_size), requires_grad=True)
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (self.hidden_size,):
                raise DimensionMismatchError("gate bias", (self.hidden_size,), v.shape)
            return Tensor(v, requires_grad=True)

        self.w_z, self.w_r, self.w_n = mat(w_z), mat(w_r), mat(w_n)
        self.b_z, self.b_r, self.b_n = vec(b_z), vec(b_r), vec(b_n)

    def parameters(self):
        return [self.w_z, self.b_z, self.w_r, self.b_r, self.w_n, self.b_n]

    def step_batch(self, x: Tensor, h: Tensor) -> Tensor:
        """One cell step on (batch, input) x and (batch, hidden) h."""
        if x.shape[-1] != self.input_size:
            raise DimensionMismatchError("gru input size", self.input_size, x.shape[-1])
        if h.shape[-1] != self.hidden_size:
            raise DimensionMismatchError("gru hidden size", self.hidden_size, h.shape[-1])
        xh = concat([x, h], axis=1)
        z = (xh @ _transpose(self.w_z) + self.b_z).sigmoid()
        r = (xh @ _transpose(self.w_r) + self.b_r).sigmoid()
        xrh = concat([x, r * h], axis=1)
        n = (xrh @ _transpose(self.w_n) + self.b_n).tanh()
        return (1.0 - z) * h + z * n

    def step_np(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Gradient-free counterpart of :meth:`step_batch`."""
        xh = np.concatenate([x, h], axis=1)
        z = _sigmoid_np(xh @ self.w_z.data.T + self.b_z.data)
        r = _sigmoid_np(xh @ self.w_r.data.T + self.b_r.data)
        xrh = np.concatenate([x, r * h], axis=1)
        n = np.tanh(xrh @ self.w_n.data.T + self.b_n.data)
        return (1.0 - z) * h + z * n


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return np.where(
        x >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x))),
        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
    )


def gru_step(cell: GruCell, x, h_prev) -> np.ndarray:
    """Single-vector GRU step per the documented gate equations."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape != (cell.input_size,):
        raise DimensionMismatchError("gru input", (cell.input_size,), x.shape)
    if h_prev.shape != (cell.hidden_size,):
        raise DimensionMismatchError("gru hidden state", (cell.hidden_size,), h_prev.shape)
    return cell.step_np(x.reshape(1, -1), h_prev.reshape(1, -1))[0]


# -- serialization -----------------------------------------------------

def _array_payload(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "values": a.ravel().tolist()}


def _array_from_payload(p: dict) -> np.ndarray:
    return np.asarray(p["values"], dtype=np.float64).reshape(p["shape"])


def mlp_to_dict(net: ResidualMlp) -> dict:
    return {
        "kind": "residual_mlp",
        "activation": net.activation,
        "skip_connections": [list(s) for s in net.skip_connections],
        "layers": [
            {"w": _array_payload(l.w.data), "b": _array_payload(l.b.data)}
            for l in net.layers
        ],
    }


def mlp_from_dict(d: dict) -> ResidualMlp:
    layers = [
        DenseLayer(_array_from_payload(l["w"]), _array_from_payload(l["b"]))
        for l in d["layers"]
    ]
    return ResidualMlp(layers, skip_connections=d["skip_connections"],
                       activation=d["activation"])


def gru_to_dict(cell: GruCell) -> dict:
    return {
        "kind": "gru_cell",
        "input_size": cell.input_size,
        "hidden_size": cell.hidden_size,
        "w_z": _array_payload(cell.w_z.data),
        "w_r": _array_payload(cell.w_r.data),
        "w_n": _array_payload(cell.w_n.data),
        "b_z": _array_payload(cell.b_z.data),
        "b_r": _array_payload(cell.b_r.data),
        "b_n": _array_payload(cell.b_n.data),
    }


def gru_from_dict(d: dict) -> GruCell:
    return GruCell(
        d["input_size"], d["hidden_size"],
        w_z=_array_from_payload(d["w_z"]), w_r=_array_from_payload(d["w_r"]),
        w_n=_array_from_payload(d["w_n"]), b_z=_array_from_payload(d["b_z"]),
        b_r=_array_from_payload(d["b_r"]), b_n=_array_from_payload(d["b_n"]),
    )


def save_params(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_params(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
