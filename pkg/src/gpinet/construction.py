"""phi/alpha/rho that exactly reproduce an arbitrary invariant labelling function.

Given a black box ``F0`` mapping an ``n x n`` pairwise matrix ``Z`` to ``n``
labels, and node features that identify nodes uniquely, the pieces are:

* a perfect hash ``H`` from node features to buckets ``0..Lh-1``;
* ``phi(z_i, z_ij, z_j) = onehot(H(z_j)) * z_ij`` so ``s_i`` holds row ``i``
  of ``Z`` scattered into buckets;
* ``alpha(z_i, s_i) = onehot(H(z_i)) s_i^T`` so ``M = Σ_i alpha`` holds all
  of ``Z`` with rows and columns relabelled by ``H``;
* ``rho(z_k, M)`` drops unoccupied rows and columns (kept in ascending
  bucket order), applies ``F0``, and reads the entry at the rank of
  ``H(z_k)`` among occupied buckets.

Node features are scalar ids, or ``(id, x)`` pairs when ``F0`` also needs a
per-node value ``x``; that value is folded into the diagonal of ``M``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from gpinet.errors import ContractError, NonInvariantOracleError, OracleError
from gpinet.graphs import GraphInstance, Permutation

PRECHECK_TRIALS = 50


def next_power_of_two(x):
    p = 1
    while p < x:
        p *= 2
    return p


def _node_id(z):
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    return float(z[0])


def _singleton(z):
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    return float(z[1]) if z.size > 1 else 0.0


@dataclass(frozen=True)
class PerfectHash:
    size: int
    table: dict = field(hash=False)

    def __call__(self, z):
        key = _node_id(z)
        try:
            return self.table[key]
        except KeyError:
            raise ContractError(f"node feature {key!r} was not hashed") from None

    @property
    def occupied(self):
        return sorted(self.table.values())

    def onehot(self, z):
        v = np.zeros(self.size)
        v[self(z)] = 1.0
        return v


def build_hash(node_feats, size=None):
    """Buckets assigned by ascending feature value in a table of ``size`` slots.

    ``size`` defaults to the next power of two that is at least ``2n``.
    """
    ids = [_node_id(z) for z in np.asarray(node_feats, dtype=np.float64).reshape(len(node_feats), -1)]
    if len(set(ids)) != len(ids):
        raise ContractError("node features must be pairwise distinct for a perfect hash")
    n = len(ids)
    size = next_power_of_two(2 * n) if size is None else int(size)
    if size < n:
        raise ContractError(f"{size} buckets cannot hold {n} distinct features")
    return PerfectHash(size, {v: k for k, v in enumerate(sorted(ids))})


def construct_phi(H):
    def phi(z_i, z_ij, z_j):
        return H.onehot(z_j) * float(z_ij)

    return phi


def construct_alpha(H):
    def alpha(z_i, s_i):
        s_i = np.asarray(s_i, dtype=np.float64)
        row = s_i.copy()
        x = _singleton(z_i)
        if x:
            row[H(z_i)] += x
        return np.outer(H.onehot(z_i), row)

    return alpha


def contract(M, H):
    occ = H.occupied
    return M[np.ix_(occ, occ)]


def construct_rho(F0, H):
    def rho(z_k, M):
        reduced = contract(np.asarray(M), H)
        n = reduced.shape[0]
        out = np.asarray(F0(reduced)).reshape(-1)
        if out.shape[0] != n:
            raise OracleError(f"oracle returned {out.shape[0]} labels for {n} nodes")
        return out[H.occupied.index(H(z_k))]

    return rho


class ConstructedGpi:
    """The assembled triple, evaluated through the invariant sum form."""

    def __init__(self, F0, hash_size=None):
        self.F0 = F0
        self.hash_size = hash_size

    def pieces(self, node_feats):
        H = build_hash(node_feats, self.hash_size)
        return H, construct_phi(H), construct_alpha(H), construct_rho(self.F0, H)

    def assemble(self, node_feats, Z):
        """Returns ``(H, s, M)``: per-node aggregates and the summed alpha matrix."""
        node_feats = np.asarray(node_feats, dtype=np.float64).reshape(len(Z), -1)
        Z = np.asarray(Z, dtype=np.float64)
        H, phi, alpha, _ = self.pieces(node_feats)
        n = len(Z)
        s = np.zeros((n, H.size))
        for i in range(n):
            for j in range(n):
                if j != i:
                    s[i] += phi(node_feats[i], Z[i, j], node_feats[j])
        M = np.zeros((H.size, H.size))
        for i in range(n):
            M += alpha(node_feats[i], s[i])
        return H, s, M

    def __call__(self, node_feats, Z):
        node_feats = np.asarray(node_feats, dtype=np.float64).reshape(len(Z), -1)
        H, _, M = self.assemble(node_feats, Z)
        rho = construct_rho(self.F0, H)
        return np.array([rho(node_feats[k], M) for k in range(len(Z))])

    def forward(self, g):
        """Labels for a scalar-pair-feature :class:`GraphInstance` (ids in column 0)."""
        if g.e != 1:
            raise ContractError("the construction handles scalar pair features only")
        return self(g.node_feats, g.pair_feats[:, :, 0])


def fold_singletons(Z, x):
    """Pairwise matrix seen by ``F0`` when node values ``x`` ride on the diagonal."""
    Z = np.array(Z, dtype=np.float64)
    Z[np.diag_indices(len(Z))] = np.asarray(x, dtype=np.float64)
    return Z


def permute_matrix(Z, sigma):
    m = sigma.mapping
    return np.asarray(Z)[np.ix_(m, m)]


# oracles; sums use math.fsum, which is correctly rounded and therefore
# independent of term order, so these are invariant bit for bit

def rowsum_oracle(Z):
    return np.array([math.fsum(row) for row in np.asarray(Z, dtype=np.float64)])


def colsum_oracle(Z):
    return rowsum_oracle(np.asarray(Z).T)


def count_positive_oracle(Z):
    Z = np.asarray(Z)
    off = ~np.eye(len(Z), dtype=bool)
    return ((Z > 0) & off).sum(axis=1)


def two_hop_oracle(Z):
    """Total weight of two-step walks leaving each node."""
    Z = np.asarray(Z, dtype=np.float64)
    return np.array([math.fsum((Z[i][:, None] * Z).ravel()) for i in range(len(Z))])


def row_max_oracle(Z):
    Z = np.asarray(Z)
    if len(Z) == 1:
        return Z[:, 0].copy()
    off = np.where(np.eye(len(Z), dtype=bool), -np.inf, Z)
    return off.max(axis=1)


def node_index_oracle(Z):
    """Not invariant: the label is the input position."""
    return np.arange(len(Z))


ORACLES = {
    "rowsum": rowsum_oracle,
    "colsum": colsum_oracle,
    "count-positive": count_positive_oracle,
    "two-hop": two_hop_oracle,
    "rowmax": row_max_oracle,
    "node-index": node_index_oracle,
}


def check_oracle_invariance(F0, sizes=(3, 4, 5), trials=PRECHECK_TRIALS, rng=None):
    """Reject ``F0`` unless ``F0(sigma(Z)) == sigma(F0(Z))`` on random draws.

    Comparison is exact. Raises :class:`NonInvariantOracleError` carrying the
    counterexample permutation and matrix.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sizes = list(sizes)
    for t in range(trials):
        n = sizes[t % len(sizes)]
        Z = rng.normal(size=(n, n))
        Z[np.diag_indices(n)] = 0.0
        sigma = Permutation.random(n, rng)
        while sigma.is_identity() and n > 1:
            sigma = Permutation.random(n, rng)
        lhs = np.asarray(F0(permute_matrix(Z, sigma)))
        rhs = np.asarray(F0(Z))[sigma.mapping]
        if lhs.shape != rhs.shape or not np.array_equal(lhs, rhs):
            raise NonInvariantOracleError(
                f"oracle is not permutation invariant: sigma={sigma.mapping.tolist()} "
                f"gives {lhs.tolist()} instead of {rhs.tolist()}",
                permutation=sigma, matrix=Z)


def binary_graphs(n):
    """All ``2**(n*(n-1))`` 0/1 pairwise matrices with zero diagonal."""
    off = [(i, j) for i in range(n) for j in range(n) if i != j]
    for bits in itertools.product((0.0, 1.0), repeat=len(off)):
        Z = np.zeros((n, n))
        for (i, j), b in zip(off, bits):
            Z[i, j] = b
        yield Z


def random_graphs(count, sizes, rng):
    sizes = list(sizes)
    for _ in range(count):
        n = int(rng.choice(sizes))
        Z = rng.normal(size=(n, n))
        Z[np.diag_indices(n)] = 0.0
        yield Z


@dataclass
class ConstructionReport:
    cases: int
    max_dev: float
    tolerance: float
    rows: list

    @property
    def ok(self):
        return self.max_dev <= self.tolerance

    @property
    def status(self):
        return "ok" if self.ok else "fail"

    def summary_line(self):
        return f"cases={self.cases} max_dev={self.max_dev:g} status={self.status}"

    def table(self, limit=20):
        lines = [f"{'case':>6} {'n':>3} {'max_dev':>12}"]
        for case, n, dev in self.rows[:limit]:
            lines.append(f"{case:>6} {n:>3} {dev:>12.3g}")
        if len(self.rows) > limit:
            lines.append(f"... {len(self.rows) - limit} more")
        return "\n".join(lines)


def verify_construction(F0, graphs, node_ids=None, tolerance=0.0, precheck=True, rng=None):
    """Compare the construction with direct ``F0`` calls on every graph.

    ``graphs`` yields pairwise matrices or scalar-pair :class:`GraphInstance`
    objects. Node ids default to ``1..n``; ``node_ids(n)`` may supply others.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if precheck:
        check_oracle_invariance(F0, rng=rng)
    model = ConstructedGpi(F0)
    rows = []
    worst = 0.0
    for case, item in enumerate(graphs):
        if isinstance(item, GraphInstance):
            ids, Z = item.node_feats, item.pair_feats[:, :, 0]
            direct = F0(fold_singletons(Z, item.node_feats[:, 1])) if item.d > 1 else F0(Z)
        else:
            Z = np.asarray(item, dtype=np.float64)
            n = len(Z)
            ids = node_ids(n) if node_ids else np.arange(1.0, n + 1.0)
            direct = F0(Z)
        built = model(ids, Z)
        dev = float(np.max(np.abs(built - np.asarray(direct)))) if len(Z) else 0.0
        rows.append((case, len(Z), dev))
        worst = max(worst, dev)
    return ConstructionReport(len(rows), worst, tolerance, rows)
