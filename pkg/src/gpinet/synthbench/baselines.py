"""Models compared on the neighbour-counting task.

All three share the batched interface ``forward_batch(node, pair, mask)``
returning ``(B, n, num_classes)`` logits, plus ``parameters()``,
``param_count()``, ``nets()`` and ``config()`` for checkpoints.
"""

from __future__ import annotations

import math

import numpy as np

from gpinet.errors import ContractError, ShapeError
from gpinet.gpi import GpiModel, gpi_from_nets, pairwise_inputs
from gpinet.numerics import tensor as T
from gpinet.numerics.nn import Mlp, mlp_param_count

DESK_WIDTH = 64
WIDE_WIDTH = 500
PARAM_TOLERANCE = 0.05


def gpi_param_count(d, e, num_classes, L, W, rho_hidden, rho_sees_s_i=False):
    rho_in = W + d + (L if rho_sees_s_i else 0)
    return (mlp_param_count([2 * d + e, L]) + mlp_param_count([d + L, W])
            + mlp_param_count([rho_in, *rho_hidden, num_classes]))


def gpi_preset(preset="desk"):
    """Widths ``(L, W, rho_hidden)`` for the desk-scale or wide model."""
    if preset == "desk":
        return DESK_WIDTH, DESK_WIDTH, (DESK_WIDTH, DESK_WIDTH)
    if preset == "wide":
        return WIDE_WIDTH, WIDE_WIDTH, (WIDE_WIDTH,) * 3
    raise ContractError(f"unknown preset {preset!r}")


def build_gpi_baseline(d, num_classes, e=1, L=DESK_WIDTH, W=DESK_WIDTH, rho_hidden=None,
                       rho_sees_s_i=True, seed=0, dtype=None):
    """Sum-aggregation model: one FC+ReLU layer each for phi and alpha, MLP rho."""
    rho_hidden = (L, L) if rho_hidden is None else tuple(rho_hidden)
    return GpiModel.create(d, e, num_classes, L=L, W=W, rho_hidden=rho_hidden,
                           aggregation="sum", rho_sees_s_i=rho_sees_s_i, seed=seed, dtype=dtype)


# fully connected

def fc_dims(n, d, e=1):
    """Input and output widths: all node and off-diagonal pair features in, n*n logits out."""
    return n * d + n * (n - 1) * e, n * n


def fc_param_count(width, in_dim, out_dim):
    return mlp_param_count([in_dim, width, width, out_dim])


def solve_fc_width(target_params, in_dim, out_dim, tolerance=PARAM_TOLERANCE):
    """Hidden width ``h`` of a 2-hidden-layer net with ``≈ target_params`` parameters.

    Params are ``h^2 + (in + out + 2) h + out``; solve the quadratic and pick
    the better of floor/ceil of the root.
    """
    b = in_dim + out_dim + 2
    c = out_dim - target_params
    disc = b * b - 4 * c
    if disc < 0 or target_params <= out_dim:
        raise ContractError(f"no width reaches {target_params} parameters")
    root = (-b + math.sqrt(disc)) / 2
    candidates = [h for h in (math.floor(root), math.ceil(root)) if h >= 1]
    if not candidates:
        raise ContractError(f"no width reaches {target_params} parameters")
    h = min(candidates, key=lambda w: abs(fc_param_count(w, in_dim, out_dim) - target_params))
    if abs(fc_param_count(h, in_dim, out_dim) / target_params - 1) > tolerance:
        raise ContractError(f"closest width {h} misses {target_params} by more than {tolerance:.0%}")
    return h


def flatten_inputs(node, pair):
    """``[z_1..z_n, z_12, z_13, ..., z_n,n-1]`` for a batch, pairs in row-major order."""
    node, pair = T.as_tensor(node), T.as_tensor(pair)
    B, n, d = node.shape
    e = pair.shape[-1]
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    flat_pairs = T.reshape(pair[:, ii, jj, :], (B, n * (n - 1) * e))
    return T.concat([T.reshape(node, (B, n * d)), flat_pairs], axis=-1)


class FcBaseline:
    kind = "fc"

    def __init__(self, n, d, e=1, width=None, target_params=None, seed=0, dtype=None, net=None):
        self.n, self.d, self.e = n, d, e
        in_dim, out_dim = fc_dims(n, d, e)
        if net is None:
            if width is None:
                if target_params is None:
                    raise ContractError("give width or target_params")
                width = solve_fc_width(target_params, in_dim, out_dim)
            net = Mlp([in_dim, width, width, out_dim], seed=seed, dtype=dtype)
        if net.in_width != in_dim or net.out_width != out_dim:
            raise ShapeError(f"fc net {net.widths} does not fit n={n}, d={d}, e={e}")
        self.net = net

    @property
    def num_classes(self):
        return self.n

    def nets(self):
        return {"net": self.net}

    def parameters(self):
        return self.net.parameters()

    def param_count(self):
        return self.net.param_count()

    def config(self):
        return {"n": self.n, "d": self.d, "e": self.e}

    def forward_batch(self, node, pair, mask=None, rng=None):
        node = T.as_tensor(node)
        B, n, d = node.shape
        if (n, d) != (self.n, self.d):
            raise ShapeError(f"fc model built for n={self.n}, d={self.d}; got {node.shape}")
        out = self.net(flatten_inputs(node, pair))
        return T.reshape(out, (B, n, n))


# order-sensitive recurrent baseline

class Lstm:
    """Standard LSTM cell; gates come from one affine map of ``[x, h]``."""

    def __init__(self, in_dim, state, rng=None, dtype=None, gates=None):
        self.in_dim, self.state = in_dim, state
        self.gates = gates if gates is not None else Mlp([in_dim + state, 4 * state], "identity",
                                                         rng=rng, dtype=dtype)
        if self.gates.widths != [in_dim + state, 4 * state]:
            raise ShapeError("gate net has the wrong shape")

    @staticmethod
    def param_count_for(in_dim, state):
        return 4 * (in_dim + state + 1) * state

    def run(self, seq):
        """Final hidden state after reading ``seq`` of shape ``(N, steps, in)``."""
        N, steps, _ = seq.shape
        S = self.state
        dtype = seq.dtype
        h = T.Tensor(np.zeros((N, S), dtype=dtype), dtype=dtype)
        c = T.Tensor(np.zeros((N, S), dtype=dtype), dtype=dtype)
        for t in range(steps):
            z = self.gates(T.concat([seq[:, t, :], h], axis=-1))
            i = T.sigmoid(z[:, :S])
            f = T.sigmoid(z[:, S:2 * S])
            o = T.sigmoid(z[:, 2 * S:3 * S])
            g = T.tanh(z[:, 3 * S:])
            c = f * c + i * g
            h = o * T.tanh(c)
        return h


def seq_param_count(d, e, num_classes, width, rho_sees_s_i=True):
    L = W = S = width
    rho_in = d + S + (S if rho_sees_s_i else 0)
    return (mlp_param_count([2 * d + e, L]) + mlp_param_count([d + S, W])
            + Lstm.param_count_for(L, S) + Lstm.param_count_for(W, S)
            + mlp_param_count([rho_in, width, width, num_classes]))


def solve_seq_width(target_params, d, e, num_classes, rho_sees_s_i=True, tolerance=PARAM_TOLERANCE):
    best = min(range(1, 1025), key=lambda w: abs(seq_param_count(d, e, num_classes, w, rho_sees_s_i)
                                                 - target_params))
    got = seq_param_count(d, e, num_classes, best, rho_sees_s_i)
    if abs(got / target_params - 1) > tolerance:
        raise ContractError(f"no sequence-model width within {tolerance:.0%} of {target_params}")
    return best


class SeqBaseline:
    """GPI skeleton whose two sums are LSTMs reading their inputs in random order.

    Each forward pass draws a fresh read order for every neighbour list and
    for the node list from the model's own seeded stream, unless explicit
    ``orders`` are passed.
    """

    kind = "seq"

    def __init__(self, d, num_classes, e=1, width=DESK_WIDTH, rho_sees_s_i=True, seed=0,
                 dtype=None, nets=None):
        self.d, self.e, self.C = d, e, num_classes
        self.rho_sees_s_i = rho_sees_s_i
        self.seed = seed
        self.order_rng = np.random.default_rng([seed, 7])
        if nets is None:
            rng = np.random.default_rng(seed)
            L = W = S = width
            rho_in = d + S + (S if rho_sees_s_i else 0)
            nets = {
                "phi": Mlp([2 * d + e, L], "relu", rng=rng, dtype=dtype),
                "alpha": Mlp([d + S, W], "relu", rng=rng, dtype=dtype),
                "lstm_neighbors": Mlp([L + S, 4 * S], "identity", rng=rng, dtype=dtype),
                "lstm_nodes": Mlp([W + S, 4 * S], "identity", rng=rng, dtype=dtype),
                "rho": Mlp([rho_in, width, width, num_classes], rng=rng, dtype=dtype),
            }
        self.phi, self.alpha, self.rho = nets["phi"], nets["alpha"], nets["rho"]
        S = nets["lstm_neighbors"].out_width // 4
        self.lstm_neighbors = Lstm(self.phi.out_width, S, gates=nets["lstm_neighbors"])
        self.lstm_nodes = Lstm(self.alpha.out_width, S, gates=nets["lstm_nodes"])
        self.state = S

    @property
    def num_classes(self):
        return self.C

    def nets(self):
        return {"phi": self.phi, "alpha": self.alpha, "lstm_neighbors": self.lstm_neighbors.gates,
                "lstm_nodes": self.lstm_nodes.gates, "rho": self.rho}

    def parameters(self):
        return [p for net in self.nets().values() for p in net.parameters()]

    def param_count(self):
        return sum(p.size for p in self.parameters())

    def config(self):
        return {"d": self.d, "e": self.e, "num_classes": self.C,
                "rho_sees_s_i": self.rho_sees_s_i, "seed": self.seed}

    def draw_orders(self, B, n, rng=None):
        """Random neighbour orders ``(B, n, n-1)`` and node orders ``(B, n)``."""
        rng = rng if rng is not None else self.order_rng
        keys = rng.random((B, n, n))
        keys[:, np.arange(n), np.arange(n)] = np.inf
        neighbor_order = np.argsort(keys, axis=-1, kind="stable")[:, :, :n - 1]
        node_order = np.argsort(rng.random((B, n)), axis=-1, kind="stable")
        return neighbor_order, node_order

    def aggregate_neighbors(self, node, pair, orders):
        B, n, _ = node.shape
        phi_out = self.phi(pairwise_inputs(node, pair))
        neighbor_order, _ = orders
        bi = np.arange(B)[:, None, None]
        ni = np.arange(n)[None, :, None]
        seq = phi_out[bi, ni, neighbor_order]
        L = phi_out.shape[-1]
        if n == 1:
            return T.Tensor(np.zeros((B, n, self.state), dtype=phi_out.dtype), dtype=phi_out.dtype)
        h = self.lstm_neighbors.run(T.reshape(seq, (B * n, n - 1, L)))
        return T.reshape(h, (B, n, self.state))

    def forward_batch(self, node, pair, mask=None, rng=None, orders=None):
        node, pair = T.as_tensor(node), T.as_tensor(pair)
        B, n, _ = node.shape
        if mask is not None and not np.array_equal(np.broadcast_to(mask, (B, n, n)),
                                                   np.broadcast_to(1.0 - np.eye(n), (B, n, n))):
            raise ContractError("the sequence baseline supports complete graphs only")
        if orders is None:
            orders = self.draw_orders(B, n, rng)
        s = self.aggregate_neighbors(node, pair, orders)
        a = self.alpha(T.concat([node, s], axis=-1))
        _, node_order = orders
        seq = a[np.arange(B)[:, None], node_order]
        G = self.lstm_nodes.run(seq)
        Gb = T.broadcast_to(T.reshape(G, (B, 1, self.state)), (B, n, self.state))
        parts = [node, Gb] + ([s] if self.rho_sees_s_i else [])
        return self.rho(T.concat(parts, axis=-1))


MODEL_KINDS = ("gpi", "fc", "seq")


def build_matched_models(kinds, n, d, e=1, width=DESK_WIDTH, rho_sees_s_i=True, seed=0,
                         dtype=None, seq_width=None, fc_width=None):
    """Instantiate ``kinds`` with parameter counts matched to the GPI model.

    The GPI model at ``width`` sets the target; the FC hidden width and the
    sequence model's common width are solved to land within 5% of it.
    """
    target = gpi_param_count(d, e, n, width, width, (width, width), rho_sees_s_i)
    models = {}
    for k, kind in enumerate(kinds):
        kseed = int(np.random.SeedSequence([seed, 11, k]).generate_state(1)[0])
        if kind == "gpi":
            models[kind] = build_gpi_baseline(d, n, e, width, width, (width, width),
                                              rho_sees_s_i, kseed, dtype)
        elif kind == "fc":
            models[kind] = FcBaseline(n, d, e, width=fc_width, target_params=target,
                                      seed=kseed, dtype=dtype)
        elif kind == "seq":
            w = seq_width or solve_seq_width(target, d, e, n, rho_sees_s_i)
            models[kind] = SeqBaseline(d, n, e, w, rho_sees_s_i, kseed, dtype)
        else:
            raise ContractError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    return models, target


def check_param_parity(models, target, tolerance=PARAM_TOLERANCE):
    counts = {kind: m.param_count() for kind, m in models.items()}
    for kind, count in counts.items():
        if abs(count / target - 1) > tolerance:
            raise ContractError(f"{kind} has {count} parameters, target {target} ± {tolerance:.0%}")
    return counts


def model_from_checkpoint(header, nets):
    kind, cfg = header["kind"], header["config"]
    if kind == "gpi":
        return gpi_from_nets(nets, cfg)
    if kind == "fc":
        return FcBaseline(cfg["n"], cfg["d"], cfg["e"], net=nets["net"])
    if kind == "seq":
        return SeqBaseline(cfg["d"], cfg["num_classes"], cfg["e"], rho_sees_s_i=cfg["rho_sees_s_i"],
                           seed=cfg["seed"], nets=nets)
    raise ContractError(f"unknown checkpoint kind {kind!r}")


def build_fc_baseline(target_params, n, d, e=1, seed=0, dtype=None):
    """FC model whose hidden width is solved to match ``target_params`` within 5%."""
    return FcBaseline(n, d, e, target_params=target_params, seed=seed, dtype=dtype)


def build_seq_baseline(d, num_classes, state_size=DESK_WIDTH, e=1, rho_sees_s_i=True, seed=0,
                       dtype=None):
    """Sequence model; 200 matches the wide setting, 64 the desk preset."""
    return SeqBaseline(d, num_classes, e, state_size, rho_sees_s_i, seed, dtype)
