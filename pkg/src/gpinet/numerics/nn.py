"""Multi-layer perceptrons built on :mod:`gpinet.numerics.tensor`."""

from __future__ import annotations

import numpy as np

from gpinet.errors import ContractError, ShapeError
from gpinet.numerics import tensor as T
from gpinet.numerics.tensor import Tensor

ACTIVATIONS = ("relu", "identity")


def mlp_param_count(widths):
    """Σ over layers of ``in * out + out``."""
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def glorot_uniform(rng, fan_in, fan_out, dtype=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(
        dtype or T.get_default_dtype())


class Mlp:
    """Stack of affine layers, each followed by ReLU or identity.

    ``widths`` lists every layer width including input and output, so
    ``Mlp([3, 8, 2])`` has two affine layers. ``activations`` has one entry
    per affine layer; the default is ReLU on hidden layers and identity on
    the output.
    """

    def __init__(self, widths, activations=None, rng=None, seed=0, dtype=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ContractError(f"invalid widths {widths}")
        depth = len(widths) - 1
        if activations is None:
            activations = ["relu"] * (depth - 1) + ["identity"]
        elif isinstance(activations, str):
            activations = [activations] * depth
        activations = list(activations)
        if len(activations) != depth or any(a not in ACTIVATIONS for a in activations):
            raise ContractError(f"need {depth} activations from {ACTIVATIONS}, got {activations}")
        rng = rng if rng is not None else np.random.default_rng(seed)
        dtype = dtype or T.get_default_dtype()
        self.widths = widths
        self.activations = activations
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            self.weights.append(Tensor(glorot_uniform(rng, fan_in, fan_out, dtype),
                                       requires_grad=True, dtype=dtype))
            self.biases.append(Tensor(np.zeros(fan_out, dtype=dtype),
                                      requires_grad=True, dtype=dtype))

    @classmethod
    def from_arrays(cls, weights, biases, activations=None):
        """Build a net from explicit weight matrices ``(in, out)`` and bias vectors."""
        weights = [np.asarray(w, dtype=T.get_default_dtype()) for w in weights]
        biases = [np.asarray(b, dtype=T.get_default_dtype()) for b in biases]
        widths = [weights[0].shape[0]] + [w.shape[1] for w in weights]
        net = cls(widths, activations)
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != net.weights[k].shape or b.shape != net.biases[k].shape:
                raise ShapeError(f"layer {k}: weight {w.shape}, bias {b.shape}")
            net.weights[k].data = w.copy()
            net.biases[k].data = b.copy()
        return net

    @property
    def in_width(self):
        return self.widths[0]

    @property
    def out_width(self):
        return self.widths[-1]

    def parameters(self):
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def zero_(self):
        for p in self.parameters():
            p.data = np.zeros_like(p.data)
        return self

    def __call__(self, x):
        return mlp_forward(self, x)

    def __repr__(self):
        return f"Mlp({self.widths}, {self.activations})"


def mlp_forward(net, x):
    """Apply ``net`` to the last axis of ``x``."""
    x = T.as_tensor(x)
    if x.shape[-1] != net.in_width:
        raise ShapeError(f"mlp expects last dim {net.in_width}, got {x.shape}")
    h = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        h = T.linear(h, w, b)
        if act == "relu":
            h = T.relu(h)
    return h
