"""Randomised property checks shared by the CLI and the test-suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gpinet.graphs import GraphInstance, Permutation, apply_permutation, automorphisms
from gpinet.gpi import GpiModel, gpi_forward, invariance_deviation, recurrent_gpi
from gpinet.numerics.gradcheck import grad_check
from gpinet.numerics.tensor import Tensor, cross_entropy


@dataclass
class CheckReport:
    name: str
    cases: int
    max_dev: float
    tolerance: float

    @property
    def ok(self):
        return self.max_dev <= self.tolerance

    def line(self):
        status = "ok" if self.ok else "fail"
        return f"{self.name}: cases={self.cases} max_dev={self.max_dev:.3e} tol={self.tolerance:g} status={status}"


def random_model(rng, d, e, num_classes, aggregation=None, width=None):
    """Small randomly shaped model with non-zero biases."""
    aggregation = aggregation or rng.choice(["sum", "attention"])
    L = width or int(rng.integers(1, 9))
    W = width or int(rng.integers(1, 9))
    hidden = tuple(int(h) for h in rng.integers(1, 9, size=rng.integers(0, 3)))
    model = GpiModel.create(d, e, num_classes, L=L, W=W, rho_hidden=hidden,
                            aggregation=str(aggregation), node_attention=bool(rng.integers(2)),
                            rho_sees_s_i=bool(rng.integers(2)), seed=int(rng.integers(2**32)))
    for p in model.parameters():
        if p.ndim == 1:
            p.data = rng.normal(scale=0.3, size=p.shape)
    return model


def random_graph(rng, n, d, e, edge_prob=None):
    """Real-valued features; ``edge_prob`` set means a random directed edge set."""
    node = rng.normal(size=(n, d))
    pair = rng.normal(size=(n, n, e))
    edges = None
    if edge_prob is not None:
        adj = rng.random((n, n)) < edge_prob
        np.fill_diagonal(adj, False)
        edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(adj))]
        pair = pair * adj[:, :, None]
    return GraphInstance(node, pair, edges)


def symmetric_digraph(rng, n, p=0.4):
    """Random directed graph closed under a random permutation, so it has a
    non-trivial automorphism group whenever that permutation is not the identity."""
    g = rng.permutation(n)
    powers = [np.arange(n)]
    while True:
        nxt = g[powers[-1]]
        if np.array_equal(nxt, powers[0]):
            break
        powers.append(nxt)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < p / max(len(powers), 1):
                for q in powers:
                    adj[q[i], q[j]] = True
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(adj))]


def invariance_suite(trials=1000, max_n=12, seed=0, aggregation=None, tolerance=1e-9):
    """Max ``|F(sigma z) - sigma F(z)|`` over random (model, graph, sigma) triples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        d, e, C = (int(x) for x in rng.integers(1, 5, size=3))
        model = random_model(rng, d, e, C, aggregation)
        g = random_graph(rng, n, d, e)
        sigma = Permutation.random(n, rng)
        worst = max(worst, invariance_deviation(lambda h: gpi_forward(model, h), g, sigma))
    return CheckReport("invariance", trials, worst, tolerance)


def automorphism_suite(graphs=50, max_n=6, seed=0, tolerance=1e-9):
    """General-graph models on random digraphs, checked over every automorphism."""
    rng = np.random.default_rng(seed)
    worst, cases = 0.0, 0
    for k in range(graphs):
        n = int(rng.integers(2, max_n + 1))
        d, e, C = (int(x) for x in rng.integers(1, 4, size=3))
        if k % 2:
            edges = symmetric_digraph(rng, n)
        else:
            adj = rng.random((n, n)) < 0.4
            np.fill_diagonal(adj, False)
            edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(adj))]
        mask = np.zeros((n, n, 1))
        for i, j in edges:
            mask[i, j] = 1.0
        g = GraphInstance(rng.normal(size=(n, d)), rng.normal(size=(n, n, e)) * mask, edges)
        model = random_model(rng, d, e, C)
        for sigma in automorphisms(g):
            moved = apply_permutation(g, sigma)
            assert moved.edge_set == g.edge_set
            worst = max(worst, invariance_deviation(lambda h: gpi_forward(model, h), g, sigma))
            cases += 1
    return CheckReport("automorphism", cases, worst, tolerance)


def recurrent_invariance_suite(trials=200, max_n=8, steps=3, seed=0, tolerance=1e-9):
    from gpinet.gpi import RecurrentGpi

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        d, e, C = (int(x) for x in rng.integers(1, 4, size=3))
        first = random_model(rng, d, e, C)
        step = random_model(rng, d + C, e, C)
        model = RecurrentGpi(first, step)
        g = random_graph(rng, n, d, e)
        sigma = Permutation.random(n, rng)
        worst = max(worst, invariance_deviation(lambda h: recurrent_gpi(model, h, steps), g, sigma))
    return CheckReport("recurrent-invariance", trials, worst, tolerance)


def model_loss(model, g, labels):
    def fn():
        return cross_entropy(gpi_forward(model, g), labels)

    return fn


def gradcheck_suite(graphs=20, n=4, seed=0, aggregations=("sum", "attention"), h=1e-5,
                    tolerance=1e-4, oracle_dtype=np.longdouble):
    """Finite-difference check of every parameter gradient of small models.

    Softmax shift symmetry gives some attention parameters an exactly zero
    gradient, and saturated logits give others gradients near 1e-9; both sit
    under the float64 difference floor, so the oracle runs in extended
    precision by default. Analytic gradients are always native float64.
    """
    rng = np.random.default_rng(seed)
    worst, cases = 0.0, 0
    for aggregation in aggregations:
        for _ in range(graphs):
            d, e, C = 2, 1, 3
            model = GpiModel.create(d, e, C, L=5, W=5, rho_hidden=(5,), aggregation=aggregation,
                                    node_attention=aggregation == "attention",
                                    rho_sees_s_i=bool(rng.integers(2)),
                                    seed=int(rng.integers(2**32)))
            for p in model.parameters():
                if p.ndim == 1:
                    p.data = rng.normal(scale=0.3, size=p.shape)
            g = random_graph(rng, n, d, e)
            labels = rng.integers(0, C, size=n)
            worst = max(worst, grad_check(model_loss(model, g, labels), model.parameters(), h,
                                          oracle_dtype=oracle_dtype))
            cases += 1
    return CheckReport("gradcheck", cases, worst, tolerance)


def non_automorphism_witness(model, g, rng, tries=50, threshold=1e-6):
    """A feature permutation (structure fixed) that changes the output, if one is found."""
    autos = set(automorphisms(g))
    for _ in range(tries):
        sigma = Permutation.random(g.n, rng)
        if sigma in autos:
            continue
        dev = invariance_deviation(lambda h: gpi_forward(model, h), g, sigma, structure=False)
        if dev > threshold:
            return sigma, dev
    return None, 0.0


__all__ = [
    "CheckReport", "Tensor", "automorphism_suite", "gradcheck_suite", "invariance_suite",
    "non_automorphism_witness", "random_graph", "random_model", "recurrent_invariance_suite",
]
