import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpinet.construction import (
    ORACLES, ConstructedGpi, binary_graphs, build_hash, check_oracle_invariance, construct_alpha,
    construct_phi, count_positive_oracle, fold_singletons, next_power_of_two, permute_matrix,
    random_graphs, rowsum_oracle, verify_construction,
)
from gpinet.errors import ContractError, NonInvariantOracleError, OracleError
from gpinet.graphs import GraphInstance, Permutation


# hash

def test_hash_example():
    H = build_hash([3.0, 1.0, 2.0])
    assert H.size == 8
    assert (H(1.0), H(2.0), H(3.0)) == (0, 1, 2)
    assert H.occupied == [0, 1, 2]


def test_hash_single_node():
    H = build_hash([42.0])
    assert H.size == 2 and H(42.0) == 0


def test_hash_rejects_duplicates_and_unknown():
    with pytest.raises(ContractError):
        build_hash([1.0, 2.0, 1.0])
    with pytest.raises(ContractError):
        build_hash([1.0, 2.0, 3.0], size=2)
    with pytest.raises(ContractError):
        build_hash([1.0, 2.0])(7.0)


@pytest.mark.parametrize("x,p", [(1, 1), (2, 2), (3, 4), (8, 8), (9, 16)])
def test_next_power_of_two(x, p):
    assert next_power_of_two(x) == p


# phi and alpha

def test_phi_example():
    H = build_hash([1.0, 2.0], size=4)
    # z_j = 2 hashes to bucket 1
    assert construct_phi(H)(1.0, 5.0, 2.0).tolist() == [0.0, 5.0, 0.0, 0.0]
    assert not construct_phi(H)(1.0, 0.0, 2.0).any()


def test_phi_example_larger_table():
    H = build_hash([1.0, 2.0, 3.0], size=4)
    assert construct_phi(H)(1.0, 5.0, 3.0).tolist() == [0.0, 0.0, 5.0, 0.0]


def test_aggregate_recovers_rows():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(4, 4))
    Z[np.diag_indices(4)] = 0.0
    ids = np.array([4.0, 2.0, 9.0, 1.0])
    H, s, _ = ConstructedGpi(rowsum_oracle).assemble(ids, Z)
    for i in range(4):
        for j in range(4):
            assert s[i, H(ids[j])] == Z[i, j]


def test_alpha_example():
    H = build_hash([1.0, 2.0], size=2)
    assert construct_alpha(H)(1.0, [1.0, 2.0]).tolist() == [[1.0, 2.0], [0.0, 0.0]]
    assert not construct_alpha(H)(2.0, np.zeros(2)).any()


def test_summed_alpha_is_relabelled_matrix():
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(5, 5))
    Z[np.diag_indices(5)] = 0.0
    ids = rng.permutation(5) + 1.0
    H, _, M = ConstructedGpi(rowsum_oracle).assemble(ids, Z)
    # P maps node k to its bucket, so M = P Z P^T
    P = np.zeros((H.size, 5))
    for k in range(5):
        P[H(ids[k]), k] = 1.0
    assert np.array_equal(M, P @ Z @ P.T)


def test_singleton_values_ride_on_diagonal():
    Z = np.array([[0.0, 1.0], [2.0, 0.0]])
    feats = np.array([[1.0, 10.0], [2.0, 20.0]])
    H, _, M = ConstructedGpi(rowsum_oracle).assemble(feats, Z)
    assert np.array_equal(M[np.ix_(H.occupied, H.occupied)], fold_singletons(Z, [10.0, 20.0]))


# end to end

def test_single_node():
    assert ConstructedGpi(rowsum_oracle)([5.0], np.zeros((1, 1))).tolist() == [0.0]


def test_rowsum_exhaustive_three_nodes():
    graphs = list(binary_graphs(3))
    assert len(graphs) == 64
    report = verify_construction(rowsum_oracle, graphs)
    assert report.cases == 64 and report.max_dev == 0.0 and report.ok


def test_rowsum_random_graphs():
    rng = np.random.default_rng(5)
    report = verify_construction(rowsum_oracle, random_graphs(100, (4, 5, 6), rng), tolerance=1e-12)
    assert report.ok and report.max_dev <= 1e-12


def test_count_positive_four_nodes():
    report = verify_construction(count_positive_oracle, binary_graphs(4))
    assert report.cases == 4096 and report.max_dev == 0.0


@pytest.mark.parametrize("name", [k for k in ORACLES if k != "node-index"])
def test_every_invariant_oracle_is_reproduced(name):
    rng = np.random.default_rng(0)
    report = verify_construction(ORACLES[name], random_graphs(40, (2, 3, 5), rng))
    assert report.max_dev == 0.0


def test_custom_node_ids():
    rng = np.random.default_rng(3)
    report = verify_construction(rowsum_oracle, random_graphs(20, (4,), rng),
                                 node_ids=lambda n: np.arange(n) * 3.5 - 7.0)
    assert report.max_dev == 0.0


def test_graph_instances_with_singleton_values():
    rng = np.random.default_rng(4)
    graphs = []
    for _ in range(10):
        Z = rng.normal(size=(4, 4, 1))
        Z[np.arange(4), np.arange(4)] = 0.0
        graphs.append(GraphInstance(np.column_stack([1.0 + np.arange(4), rng.normal(size=4)]), Z))
    assert verify_construction(rowsum_oracle, graphs).max_dev == 0.0


def test_node_index_oracle_rejected():
    with pytest.raises(NonInvariantOracleError) as info:
        check_oracle_invariance(ORACLES["node-index"])
    err = info.value
    Z, sigma = err.matrix, err.permutation
    assert not sigma.is_identity()
    assert not np.array_equal(ORACLES["node-index"](permute_matrix(Z, sigma)),
                              ORACLES["node-index"](Z)[sigma.mapping])


def test_oracle_wrong_length():
    with pytest.raises(OracleError):
        ConstructedGpi(lambda Z: np.zeros(len(Z) + 1))([1.0, 2.0], np.zeros((2, 2)))


@given(st.integers(2, 6), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_construction_is_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, n))
    Z[np.diag_indices(n)] = 0.0
    ids = rng.permutation(n) * 1.5 + 1.0
    sigma = Permutation.random(n, rng)
    model = ConstructedGpi(ORACLES["two-hop"])
    out = model(ids, Z)
    moved = model(ids[sigma.mapping], permute_matrix(Z, sigma))
    assert np.array_equal(moved, out[sigma.mapping])


def test_composed_permutations():
    rng = np.random.default_rng(8)
    Z = rng.normal(size=(5, 5))
    Z[np.diag_indices(5)] = 0.0
    s, t = Permutation.random(5, rng), Permutation.random(5, rng)
    twice = permute_matrix(permute_matrix(Z, s), t)
    assert np.array_equal(twice, permute_matrix(Z, s.compose(t)))


def test_report_table_and_summary():
    report = verify_construction(rowsum_oracle, binary_graphs(2))
    assert report.summary_line() == "cases=4 max_dev=0 status=ok"
    assert report.table(2).splitlines()[-1] == "... 2 more"
