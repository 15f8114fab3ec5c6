"""Graph instances, node permutations, and the same-set neighbour-count task.

A :class:`GraphInstance` stores node features ``z_i`` as an ``(n, d)`` array
and pairwise features ``z_ij`` as an ``(n, n, e)`` array whose diagonal is
unused. Without an ``edge_set`` the graph is complete and node ``i`` sees
every ``j != i``; with one, node ``i`` sees only ``N(i) = {j : (i, j) in E}``.

Permuting by ``sigma`` follows ``[sigma(z)]_i = z_sigma(i)`` and
``[sigma(z)]_ij = z_sigma(i),sigma(j)``; labels permute the same way,
``sigma(y)_k = y_sigma(k)``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from gpinet.errors import CapabilityError, ContractError
from gpinet.io import atomic_open

AUTOMORPHISM_BOUND = 8


class Permutation:
    """A bijection on ``{0, ..., n-1}`` stored as ``mapping[i] = sigma(i)``."""

    __slots__ = ("mapping",)

    def __init__(self, mapping):
        mapping = np.asarray(mapping, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(mapping), np.arange(len(mapping))):
            raise ContractError(f"not a permutation: {mapping.tolist()}")
        self.mapping = mapping
        self.mapping.flags.writeable = False

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @classmethod
    def random(cls, n, rng):
        return cls(rng.permutation(n))

    def __len__(self):
        return len(self.mapping)

    def __call__(self, i):
        return int(self.mapping[i])

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.mapping, other.mapping)

    def __hash__(self):
        return hash(tuple(self.mapping.tolist()))

    def __repr__(self):
        return f"Permutation({self.mapping.tolist()})"

    def compose(self, other):
        """``self ∘ other``: ``i -> self(other(i))``.

        Permuting by ``self`` and then by ``other`` equals permuting once by
        ``self.compose(other)``.
        """
        if len(other) != len(self):
            raise ContractError("cannot compose permutations of different length")
        return Permutation(self.mapping[other.mapping])

    def inverse(self):
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(len(self.mapping))
        return Permutation(inv)

    def is_identity(self):
        return bool(np.array_equal(self.mapping, np.arange(len(self.mapping))))


def _as_edge_set(edges, n):
    out = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n):
            raise ContractError(f"edge ({i}, {j}) outside 0..{n - 1}")
        if i == j:
            raise ContractError(f"self loop ({i}, {i}) not allowed")
        out.add((i, j))
    return frozenset(out)


@dataclass(eq=False)
class GraphInstance:
    node_feats: np.ndarray
    pair_feats: np.ndarray
    edge_set: frozenset | None = None
    labels: np.ndarray | None = None
    group: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.node_feats = np.asarray(self.node_feats, dtype=np.float64)
        if self.node_feats.ndim == 1:
            self.node_feats = self.node_feats[:, None]
        n = self.node_feats.shape[0]
        pf = np.asarray(self.pair_feats, dtype=np.float64)
        if pf.ndim == 2:
            pf = pf[:, :, None]
        if pf.ndim != 3 or pf.shape[:2] != (n, n):
            raise ContractError(f"pair_feats must be ({n}, {n}, e), got {pf.shape}")
        pf = pf.copy()
        pf[np.arange(n), np.arange(n)] = 0.0
        self.pair_feats = pf
        if self.edge_set is not None:
            self.edge_set = _as_edge_set(self.edge_set, n)
            off = np.ones((n, n), dtype=bool)
            for i, j in self.edge_set:
                off[i, j] = False
            if np.any(pf[off] != 0.0):
                raise ContractError("pair features present on pairs outside edge_set")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ContractError("labels must have one entry per node")
            if n and (self.labels.min() < 0 or self.labels.max() > n - 1):
                raise ContractError("labels must lie in 0..n-1")
        if self.group is not None:
            self.group = np.asarray(self.group, dtype=np.int64)
            if self.group.shape != (n,):
                raise ContractError("group must have one entry per node")

    @property
    def n(self):
        return self.node_feats.shape[0]

    @property
    def d(self):
        return self.node_feats.shape[1]

    @property
    def e(self):
        return self.pair_feats.shape[2]

    @property
    def complete(self):
        return self.edge_set is None

    def neighbor_mask(self):
        """``mask[i, j] = 1`` iff ``j`` is summed over for node ``i``."""
        n = self.n
        if self.edge_set is None:
            return 1.0 - np.eye(n)
        mask = np.zeros((n, n))
        for i, j in self.edge_set:
            mask[i, j] = 1.0
        return mask

    def pair_feature(self, i, j):
        if i == j:
            raise ContractError("no pair feature on the diagonal")
        if self.edge_set is not None and (i, j) not in self.edge_set:
            raise ContractError(f"({i}, {j}) is not an edge")
        return self.pair_feats[i, j]

    def __eq__(self, other):
        if not isinstance(other, GraphInstance):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (np.array_equal(self.node_feats, other.node_feats)
                and np.array_equal(self.pair_feats, other.pair_feats)
                and self.edge_set == other.edge_set
                and same(self.labels, other.labels)
                and same(self.group, other.group))

    def with_labels(self, labels):
        return GraphInstance(self.node_feats, self.pair_feats, self.edge_set, labels,
                             self.group, dict(self.meta))


def apply_permutation(g, sigma, structure=True):
    """Relabel nodes: output node ``i`` is input node ``sigma(i)``.

    Labels are dropped because they are outputs, not inputs. With
    ``structure=False`` the edge set is kept fixed while features move, which
    is how a non-automorphism acts on a graph of given shape.
    """
    if len(sigma) != g.n:
        raise ContractError(f"permutation of length {len(sigma)} on a {g.n}-node graph")
    m = sigma.mapping
    edges = g.edge_set
    if edges is not None and structure:
        inv = sigma.inverse().mapping
        edges = frozenset((int(inv[i]), int(inv[j])) for i, j in edges)
    pair = g.pair_feats[np.ix_(m, m)]
    if edges is not None and not structure:
        pair = pair * GraphInstance(g.node_feats, np.zeros_like(pair), edges).neighbor_mask()[:, :, None]
    group = None if g.group is None else g.group[m]
    return GraphInstance(g.node_feats[m], pair, edges, None, group)


def permute_labels(y, sigma):
    """``out[k] = y[sigma(k)]``; works row-wise on 2-D arrays too."""
    y = np.asarray(y)
    if len(y) != len(sigma):
        raise ContractError(f"{len(y)} labels vs permutation of length {len(sigma)}")
    return y[sigma.mapping]


def adjacency(g):
    if g.edge_set is None:
        raise ContractError("automorphisms need an explicit edge_set")
    return g.neighbor_mask().astype(bool)


def automorphisms(g, bound=AUTOMORPHISM_BOUND):
    """All ``sigma`` with ``(i, j) in E  <=>  (sigma(i), sigma(j)) in E``.

    Brute force over ``n!`` candidates, refused above ``bound`` nodes.
    """
    adj = adjacency(g)
    n = g.n
    if n > bound:
        raise CapabilityError(f"brute-force automorphisms limited to n <= {bound}, got {n}")
    out = []
    for perm in itertools.permutations(range(n)):
        p = np.array(perm)
        if np.array_equal(adj[np.ix_(p, p)], adj):
            out.append(Permutation(p))
    return out


def edges_of(g):
    """Edge set, or for complete-mode graphs the pairs with nonzero scalar pair feature."""
    if g.edge_set is not None:
        return g.edge_set
    if g.e != 1:
        raise ContractError("edges can only be read off scalar pair features")
    ii, jj = np.nonzero(g.pair_feats[:, :, 0])
    return frozenset((int(i), int(j)) for i, j in zip(ii, jj) if i != j)


def label_oracle(g):
    """``y_i = #{j in N(i) : group(i) == group(j)}``."""
    if g.group is None:
        raise ContractError("label_oracle needs group assignments")
    y = np.zeros(g.n, dtype=np.int64)
    for i, j in edges_of(g):
        if g.group[i] == g.group[j]:
            y[i] += 1
    return y


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 10
    K: int = 4
    p_edge: float = 0.5
    count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.K < 1 or self.count < 0:
            raise ContractError(f"invalid spec {self}")
        if not 0.0 <= self.p_edge <= 1.0:
            raise ContractError("p_edge must lie in [0, 1]")


def make_instance(gamma, edges, K, labels=None):
    """Synthetic-task features from set assignments and directed edge pairs."""
    gamma = np.asarray(gamma, dtype=np.int64)
    n = len(gamma)
    if n and (gamma.min() < 0 or gamma.max() >= K):
        raise ContractError(f"group ids must lie in 0..{K - 1}")
    node = np.eye(K)[gamma]
    pair = np.zeros((n, n, 1))
    for i, j in edges:
        pair[i, j, 0] = 1.0
    g = GraphInstance(node, pair, group=gamma)
    g.meta["K"] = K
    return g.with_labels(label_oracle(g) if labels is None else labels)


def generate_instances(spec):
    """Sample ``spec.count`` labelled graphs, fully determined by ``spec.seed``.

    One Bernoulli(p_edge) draw per unordered pair, mirrored into both
    directions; groups uniform on ``0..K-1``; node features one-hot groups;
    pair features the 0/1 edge indicator on every ordered pair.
    """
    rng = np.random.default_rng(spec.seed)
    n, K = spec.n, spec.K
    iu, ju = np.triu_indices(n, k=1)
    out = []
    for _ in range(spec.count):
        gamma = rng.integers(0, K, size=n)
        draws = rng.random(len(iu)) < spec.p_edge
        pair = np.zeros((n, n, 1))
        pair[iu[draws], ju[draws], 0] = 1.0
        pair[ju[draws], iu[draws], 0] = 1.0
        g = GraphInstance(np.eye(K)[gamma], pair, group=gamma)
        g.meta["K"] = K
        g.labels = label_oracle(g)
        out.append(g)
    return out


# dataset files: one JSON object per line

RECORD_FIELDS = ("n", "K", "gamma", "edges", "labels", "seed")


def to_record(g, seed):
    K = g.meta.get("K", g.d)
    return {
        "n": g.n,
        "K": int(K),
        "gamma": g.group.tolist(),
        "edges": [list(p) for p in sorted(edges_of(g))],
        "labels": g.labels.tolist(),
        "seed": int(seed),
    }


def from_record(rec):
    missing = [k for k in RECORD_FIELDS if k not in rec]
    if missing:
        raise ContractError(f"record missing fields {missing}")
    g = make_instance(rec["gamma"], [tuple(p) for p in rec["edges"]], rec["K"], rec["labels"])
    if g.n != rec["n"]:
        raise ContractError(f"record says n={rec['n']} but gamma has {g.n} entries")
    g.meta["seed"] = rec["seed"]
    return g


def dump_dataset(path, instances, seed):
    with atomic_open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in instances:
            fh.write(json.dumps(to_record(g, seed), separators=(",", ":")) + "\n")


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return [from_record(json.loads(line)) for line in fh if line.strip()]
