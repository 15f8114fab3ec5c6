"""Graph-permutation-invariant labelling networks.

For every node ``k`` the model computes::

    s_i    = Σ_{j in J(i)} phi(z_i, z_ij, z_j)        J(i) = {j != i} or N(i)
    G      = Σ_i alpha(z_i, s_i)
    out_k  = rho(z_k, G)

with sums optionally replaced by attention-weighted averages. Attention does
not use a separate softmax pass: phi is extended by one coordinate carrying
``exp(beta)``, the first coordinates carry ``exp(beta) * phi``, and the
aggregate is the ratio of the two accumulated parts. The result is exactly
``Σ_j w_ij phi_ij`` with ``w_ij = softmax_j(beta_ij)``.

Everything is computed on batches of equal-size graphs: node features
``(B, n, d)``, pair features ``(B, n, n, e)`` and a neighbour mask
``(B, n, n)``. Reductions run over fixed array axes, so the summation order
is always ascending node index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from gpinet.errors import ContractError, ShapeError
from gpinet.io import atomic_open
from gpinet.numerics import tensor as T
from gpinet.numerics.nn import Mlp
from gpinet.numerics.tensor import Tensor

CHECKPOINT_FORMAT = "gpinet-checkpoint"
CHECKPOINT_VERSION = 1
AGGREGATIONS = ("sum", "attention")


def pairwise_inputs(node, pair):
    """Concatenate ``[z_i, z_ij, z_j]`` for every ordered pair."""
    B, n, d = node.shape
    zi = T.broadcast_to(T.reshape(node, (B, n, 1, d)), (B, n, n, d))
    zj = T.broadcast_to(T.reshape(node, (B, 1, n, d)), (B, n, n, d))
    return T.concat([zi, pair, zj], axis=-1)


def weighted_aggregate(values, scores, mask, axis):
    """Attention aggregation realised through the extended-phi ratio.

    ``values`` carries the reduced axis at ``axis`` and features last;
    ``scores`` has the same leading shape with feature width 1 and ``mask``
    broadcasts against ``scores.shape[:-1]``. The max unmasked score is
    subtracted before exponentiation. Rows with nothing unmasked aggregate
    to zero. Returns ``(aggregate, weights)``.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=scores.dtype), scores.shape[:-1])
    raw = scores.data[..., 0]
    row_max = np.where(m > 0, raw, -np.inf).max(axis=axis, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    shift = np.where(m > 0, row_max, raw)
    expw = T.exp(scores - shift[..., None]) * m[..., None]
    width = values.shape[-1]
    extended = T.concat([expw * values, expw], axis=-1)
    acc = T.tsum(extended, axis=axis)
    num, den = acc[..., :width], acc[..., width:]
    empty = (den.data == 0.0).astype(den.dtype)
    weights = expw.data[..., 0] / np.expand_dims(den.data[..., 0] + empty[..., 0], axis)
    return num / (den + empty), weights


@dataclass(eq=False)
class GpiModel:
    """phi: R^{2d+e} -> R^L, alpha: R^{d+L} -> R^W, rho: R^{W+d(+L)} -> R^C."""

    phi: Mlp
    alpha: Mlp
    rho: Mlp
    beta_neighbor: Mlp | None = None
    beta_node: Mlp | None = None
    aggregation: str = "sum"
    rho_sees_s_i: bool = False

    kind = "gpi"

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ContractError(f"aggregation must be one of {AGGREGATIONS}")
        if self.aggregation == "attention" and self.beta_neighbor is None:
            raise ContractError("attention aggregation requires beta_neighbor")
        d, L, W = self.node_dim, self.phi.out_width, self.alpha.out_width
        e = self.phi.in_width - 2 * d
        if e < 1:
            raise ShapeError(f"phi input {self.phi.in_width} too small for d={d}")
        if self.alpha.in_width != d + L:
            raise ShapeError(f"alpha input {self.alpha.in_width} != d + L = {d + L}")
        expect = W + d + (L if self.rho_sees_s_i else 0)
        if self.rho.in_width != expect:
            raise ShapeError(f"rho input {self.rho.in_width} != {expect}")
        if self.beta_neighbor is not None and (
                self.beta_neighbor.in_width != 2 * d + e or self.beta_neighbor.out_width != 1):
            raise ShapeError("beta_neighbor must map R^{2d+e} -> R")
        if self.beta_node is not None and (
                self.beta_node.in_width != d + L or self.beta_node.out_width != 1):
            raise ShapeError("beta_node must map R^{d+L} -> R")

    @property
    def node_dim(self):
        return self.alpha.in_width - self.phi.out_width

    @property
    def pair_dim(self):
        return self.phi.in_width - 2 * self.node_dim

    @property
    def num_classes(self):
        return self.rho.out_width

    @classmethod
    def create(cls, d, e, num_classes, L=64, W=64, phi_hidden=(), alpha_hidden=(),
               rho_hidden=(64, 64), aggregation="sum", node_attention=False,
               rho_sees_s_i=False, seed=0, dtype=None):
        """Randomly initialised model; phi and alpha end in ReLU, rho is linear on top."""
        rng = np.random.default_rng(seed)
        phi = Mlp([2 * d + e, *phi_hidden, L], "relu", rng=rng, dtype=dtype)
        alpha = Mlp([d + L, *alpha_hidden, W], "relu", rng=rng, dtype=dtype)
        rho_in = W + d + (L if rho_sees_s_i else 0)
        rho = Mlp([rho_in, *rho_hidden, num_classes], rng=rng, dtype=dtype)
        beta_n = beta_v = None
        if aggregation == "attention":
            beta_n = Mlp([2 * d + e, 1], rng=rng, dtype=dtype)
            if node_attention:
                beta_v = Mlp([d + L, 1], rng=rng, dtype=dtype)
        return cls(phi, alpha, rho, beta_n, beta_v, aggregation, rho_sees_s_i)

    def nets(self):
        out = {"phi": self.phi, "alpha": self.alpha, "rho": self.rho}
        if self.beta_neighbor is not None:
            out["beta_neighbor"] = self.beta_neighbor
        if self.beta_node is not None:
            out["beta_node"] = self.beta_node
        return out

    def parameters(self):
        return [p for net in self.nets().values() for p in net.parameters()]

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def config(self):
        return {"aggregation": self.aggregation, "rho_sees_s_i": self.rho_sees_s_i}

    # batched forward pieces

    def aggregate_neighbors(self, node, pair, mask):
        """``s_i`` for every node, shape ``(B, n, L)``."""
        inputs = pairwise_inputs(node, pair)
        phi_out = self.phi(inputs)
        mask = np.asarray(mask, dtype=phi_out.dtype)
        if self.aggregation == "sum":
            return T.tsum(phi_out * mask[..., None], axis=2)
        scores = self.beta_neighbor(inputs)
        s, _ = weighted_aggregate(phi_out, scores, mask, axis=2)
        return s

    def neighbor_weights(self, node, pair, mask):
        """Attention weights ``w_ij`` of shape ``(B, n, n)`` (zero off-neighbourhood)."""
        if self.beta_neighbor is None:
            raise ContractError("model has no neighbour attention")
        inputs = pairwise_inputs(node, pair)
        scores = self.beta_neighbor(inputs)
        _, w = weighted_aggregate(self.phi(inputs), scores, np.asarray(mask, float), axis=2)
        return w

    def graph_vector(self, node, s):
        """``G`` of shape ``(B, W)``."""
        ctx = T.concat([node, s], axis=-1)
        a = self.alpha(ctx)
        if self.beta_node is None or self.aggregation == "sum":
            return T.tsum(a, axis=1)
        scores = self.beta_node(ctx)
        ones = np.ones(scores.shape[:-1], dtype=a.dtype)
        G, _ = weighted_aggregate(a, scores, ones, axis=1)
        return G

    def readout(self, node, s, G):
        B, n, _ = node.shape
        W = G.shape[-1]
        Gb = T.broadcast_to(T.reshape(G, (B, 1, W)), (B, n, W))
        parts = [node, Gb] + ([s] if self.rho_sees_s_i else [])
        return self.rho(T.concat(parts, axis=-1))

    def forward_batch(self, node, pair, mask, rng=None):
        node, pair = T.as_tensor(node), T.as_tensor(pair)
        if node.shape[-1] != self.node_dim or pair.shape[-1] != self.pair_dim:
            raise ShapeError(f"model expects d={self.node_dim}, e={self.pair_dim}; "
                             f"got node {node.shape}, pair {pair.shape}")
        s = self.aggregate_neighbors(node, pair, mask)
        G = self.graph_vector(node, s)
        return self.readout(node, s, G)


def graph_arrays(g):
    """Single graph as a batch of one."""
    return g.node_feats[None], g.pair_feats[None], g.neighbor_mask()[None]


def stack_graphs(graphs):
    if not graphs:
        raise ContractError("empty graph list")
    n = graphs[0].n
    if any(g.n != n for g in graphs):
        raise ContractError("batched graphs must share n")
    node = np.stack([g.node_feats for g in graphs])
    pair = np.stack([g.pair_feats for g in graphs])
    mask = np.stack([g.neighbor_mask() for g in graphs])
    return node, pair, mask


def _cast(model, arrays):
    dtype = model.parameters()[0].dtype
    return tuple(np.asarray(a, dtype=dtype) for a in arrays)


def neighbor_aggregate(g, i, model):
    """``s_i`` for node ``i`` of graph ``g``."""
    node, pair, mask = _cast(model, graph_arrays(g))
    return model.aggregate_neighbors(Tensor(node, dtype=node.dtype), Tensor(pair, dtype=pair.dtype), mask)[0, i]


def gpi_forward(model, g):
    """Per-node logits, a tensor of shape ``(n, num_classes)``."""
    node, pair, mask = _cast(model, graph_arrays(g))
    return model.forward_batch(Tensor(node, dtype=node.dtype), Tensor(pair, dtype=pair.dtype), mask)[0]


@dataclass(eq=False)
class RecurrentGpi:
    """Iterated GPI: step ``t+1`` sees ``[z_i, softmax(logits_t)_i]`` as node features.

    ``first`` consumes the raw node features; ``step`` (node dimension
    ``d + C``) is shared across all later steps.
    """

    first: GpiModel
    step: GpiModel

    kind = "recurrent_gpi"

    def __post_init__(self):
        C = self.first.num_classes
        if self.step.node_dim != self.first.node_dim + C:
            raise ContractError(
                f"step model needs node dim {self.first.node_dim + C}, has {self.step.node_dim}")
        if self.step.pair_dim != self.first.pair_dim or self.step.num_classes != C:
            raise ContractError("step model must share pair dim and class count")

    def config(self):
        return {"first": self.first.config(), "step": self.step.config()}

    def nets(self):
        out = {f"first.{k}": v for k, v in self.first.nets().items()}
        out.update({f"step.{k}": v for k, v in self.step.nets().items()})
        return out

    def parameters(self):
        return self.first.parameters() + self.step.parameters()

    def forward_batch(self, node, pair, mask, rng=None, steps=2):
        if steps < 1:
            raise ContractError("recurrence needs T >= 1")
        node, pair = T.as_tensor(node), T.as_tensor(pair)
        logits = self.first.forward_batch(node, pair, mask)
        for _ in range(steps - 1):
            probs = T.softmax(logits, axis=-1)
            logits = self.step.forward_batch(T.concat([node, probs], axis=-1), pair, mask)
        return logits


def recurrent_gpi(model, g, T_steps):
    node, pair, mask = _cast(model.first, graph_arrays(g))
    return model.forward_batch(Tensor(node, dtype=node.dtype), Tensor(pair, dtype=pair.dtype), mask,
                               steps=T_steps)[0]


def invariance_deviation(forward, g, sigma, structure=True):
    """``max |F(sigma(g)) - sigma(F(g))|`` for a per-graph forward function."""
    from gpinet.graphs import apply_permutation, permute_labels

    base = np.asarray(_data(forward(g)))
    moved = np.asarray(_data(forward(apply_permutation(g, sigma, structure=structure))))
    return float(np.max(np.abs(moved - permute_labels(base, sigma)))) if base.size else 0.0


def _data(x):
    return x.data if isinstance(x, Tensor) else x


# checkpoints

def _net_header(net):
    return {"widths": net.widths, "activations": net.activations}


def save_checkpoint(path, model, extra=None):
    """Versioned JSON header plus flat parameter arrays in one ``.npz`` file."""
    nets = model.nets()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": model.config() if hasattr(model, "config") else {},
        "nets": {name: _net_header(net) for name, net in nets.items()},
        "extra": extra or {},
    }
    arrays = {"__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for name, net in nets.items():
        for k, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}/W{k}"] = w.data.reshape(-1)
            arrays[f"{name}/b{k}"] = b.data.reshape(-1)
    with atomic_open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint(path):
    """Return ``(header, {net name: Mlp})``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"{path}: not a gpinet checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {header.get('version')}")
        nets = {}
        for name, meta in header["nets"].items():
            widths = meta["widths"]
            weights, biases = [], []
            for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                weights.append(data[f"{name}/W{k}"].reshape(a, b))
                biases.append(data[f"{name}/b{k}"].reshape(b))
            dtype = weights[0].dtype
            with T.default_dtype(dtype):
                nets[name] = Mlp.from_arrays(weights, biases, meta["activations"])
    return header, nets


def gpi_from_nets(nets, config, prefix=""):
    return GpiModel(nets[prefix + "phi"], nets[prefix + "alpha"], nets[prefix + "rho"],
                    nets.get(prefix + "beta_neighbor"), nets.get(prefix + "beta_node"),
                    config.get("aggregation", "sum"), config.get("rho_sees_s_i", False))


def load_checkpoint(path):
    header, nets = read_checkpoint(path)
    kind = header["kind"]
    if kind == "gpi":
        return gpi_from_nets(nets, header["config"])
    if kind == "recurrent_gpi":
        cfg = header["config"]
        return RecurrentGpi(gpi_from_nets(nets, cfg["first"], "first."),
                            gpi_from_nets(nets, cfg["step"], "step."))
    from gpinet.synthbench.baselines import model_from_checkpoint

    return model_from_checkpoint(header, nets)
