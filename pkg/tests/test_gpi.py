import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpinet import verify
from gpinet.errors import ContractError, ShapeError
from gpinet.gpi import (
    GpiModel, RecurrentGpi, gpi_forward, graph_arrays, invariance_deviation, load_checkpoint,
    neighbor_aggregate, pairwise_inputs, read_checkpoint, recurrent_gpi, save_checkpoint,
    weighted_aggregate,
)
from gpinet.graphs import GraphInstance, Permutation, apply_permutation, automorphisms
from gpinet.numerics import Mlp, Tensor
from gpinet.numerics import tensor as T


def linear_net(rows, out=1):
    """Identity-activation net with all-ones weights and no bias."""
    return Mlp.from_arrays([np.ones((rows, out))], [np.zeros(out)], "identity")


def s_all(model, g):
    node, pair, mask = graph_arrays(g)
    return model.aggregate_neighbors(Tensor(node), Tensor(pair), mask).data[0]


def random_complete(rng, n=4, d=2, e=1):
    return GraphInstance(rng.normal(size=(n, d)), rng.normal(size=(n, n, e)))


# neighbour aggregation

def test_sum_scalar_example():
    # phi reads only z_ij: weights [0, 1, 0] over [z_i, z_ij, z_j]
    phi = Mlp.from_arrays([[[0.0], [1.0], [0.0]]], [[0.0]], "identity")
    model = GpiModel(phi, linear_net(2), linear_net(2))
    z = np.array([[0, 2.0, 3.0], [5.0, 0, 7.0], [11.0, 13.0, 0]])
    g = GraphInstance(np.array([1.0, 2.0, 3.0]), z)
    assert neighbor_aggregate(g, 0, model).data.tolist() == [5.0]
    assert s_all(model, g)[:, 0].tolist() == [5.0, 12.0, 24.0]


def test_attention_with_zero_beta_is_mean():
    rng = np.random.default_rng(0)
    m = GpiModel.create(2, 1, 3, L=6, W=5, aggregation="attention", seed=1)
    m.beta_neighbor.zero_()
    g = random_complete(rng)
    node, pair, mask = graph_arrays(g)
    phi = m.phi(pairwise_inputs(Tensor(node), Tensor(pair))).data[0]
    for i in range(4):
        others = [j for j in range(4) if j != i]
        assert np.allclose(s_all(m, g)[i], phi[i, others].mean(axis=0), rtol=0, atol=1e-15)
    w = m.neighbor_weights(Tensor(node), Tensor(pair), mask)[0]
    assert np.allclose(w[~np.eye(4, dtype=bool)], 1 / 3, rtol=0, atol=1e-15)


@given(st.integers(2, 8), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_zero_beta_attention_equals_sum_over_count(n, seed):
    rng = np.random.default_rng(seed)
    att = GpiModel.create(2, 1, 2, L=4, W=3, aggregation="attention", seed=seed)
    att.beta_neighbor.zero_()
    summ = GpiModel(att.phi, att.alpha, att.rho)
    general = rng.random() < 0.5
    g = verify.random_graph(rng, n, 2, 1, edge_prob=0.5 if general else None)
    count = g.neighbor_mask().sum(axis=1)
    expect = s_all(summ, g) / np.maximum(count, 1)[:, None]
    assert np.array_equal(s_all(att, g), expect)


@given(st.integers(3, 8), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_attention_weights_are_a_distribution(n, seed):
    rng = np.random.default_rng(seed)
    m = GpiModel.create(2, 1, 2, L=4, W=3, aggregation="attention", seed=seed)
    for p in m.beta_neighbor.parameters():
        p.data = rng.normal(size=p.shape)
    g = random_complete(rng, n)
    w = m.neighbor_weights(*[Tensor(a) if k < 2 else a for k, a in enumerate(graph_arrays(g))])[0]
    off = ~np.eye(n, dtype=bool)
    assert np.all(w[off] > 0) and np.all(w[off] < 1) and not w[~off].any()
    assert np.allclose(w.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_single_neighbour_has_weight_one():
    m = GpiModel.create(2, 1, 2, L=4, W=3, aggregation="attention", seed=0)
    node, pair, mask = graph_arrays(random_complete(np.random.default_rng(0), 2))
    w = m.neighbor_weights(Tensor(node), Tensor(pair), mask)[0]
    assert w.tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_attention_is_weighted_average_of_phi():
    rng = np.random.default_rng(5)
    m = GpiModel.create(2, 1, 2, L=3, W=3, aggregation="attention", seed=5)
    g = random_complete(rng, 5)
    node, pair, mask = graph_arrays(g)
    inputs = pairwise_inputs(Tensor(node), Tensor(pair))
    beta = m.beta_neighbor(inputs).data[0, :, :, 0]
    phi = m.phi(inputs).data[0]
    for i in range(5):
        js = [j for j in range(5) if j != i]
        w = np.exp(beta[i, js]) / np.exp(beta[i, js]).sum()
        assert np.allclose(s_all(m, g)[i], w @ phi[i, js], rtol=1e-13, atol=1e-14)


def test_isolated_node_gives_zero():
    rng = np.random.default_rng(1)
    g = GraphInstance(rng.normal(size=(3, 2)), np.zeros((3, 3, 1)), edge_set={(0, 1)})
    for agg in ("sum", "attention"):
        m = GpiModel.create(2, 1, 2, L=4, W=3, aggregation=agg, seed=2)
        s = s_all(m, g)
        assert not s[1].any() and not s[2].any()


def test_huge_scores_do_not_overflow():
    values = Tensor(np.ones((1, 3, 2)))
    scores = Tensor(np.array([[[800.0], [799.0], [-900.0]]]))
    agg, w = weighted_aggregate(values, scores, np.ones((1, 3)), axis=1)
    assert np.allclose(agg.data, 1.0) and np.isclose(w.sum(), 1.0)


# model assembly

def test_dimension_chain_checked():
    with pytest.raises(ShapeError):
        GpiModel(Mlp([5, 4]), Mlp([2 + 3, 3]), Mlp([3 + 2, 2]))
    with pytest.raises(ContractError):
        GpiModel(Mlp([5, 4]), Mlp([6, 3]), Mlp([5, 2]), aggregation="attention")
    with pytest.raises(ShapeError):
        gpi_forward(GpiModel.create(3, 1, 2, seed=0), random_complete(np.random.default_rng(0)))


def test_zero_phi_alpha_constant_graph_vector():
    m = GpiModel.create(2, 1, 3, L=4, W=4, seed=0)
    m.phi.zero_()
    m.alpha.zero_()
    node = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
    pair = np.random.default_rng(2).normal(size=(4, 4, 1))
    out = gpi_forward(m, GraphInstance(node, pair)).data
    expect = m.rho(Tensor(np.concatenate([node, np.zeros((4, 4))], axis=1))).data
    assert np.array_equal(out, expect)
    assert np.array_equal(out[0], out[2])


def toy_model(C=1):
    rho = Mlp.from_arrays([np.array([[1.0, 1.0], [1.0, -1.0]])[:, :C]], [np.zeros(C)], "identity")
    return GpiModel(linear_net(3), linear_net(2), rho)


def toy_closed_form(z, Z):
    n = len(z)
    G = sum(z[i] + sum(z[i] + Z[i, j] + z[j] for j in range(n) if j != i) for i in range(n))
    return np.array([z[k] + G for k in range(n)])


def test_linear_scalar_toy():
    z = np.array([0.5, -1.0, 2.0])
    Z = np.array([[0, 3.0, -2.0], [1.0, 0, 4.0], [0.25, -0.5, 0]])
    # per-node terms of G: 0.5 + 2.5 + 0.5, -1 + 0.5 + 5, 2 + 2.75 + 0.5
    assert toy_closed_form(z, Z)[0] == 0.5 + 13.25
    out = gpi_forward(toy_model(), GraphInstance(z, Z)).data[:, 0]
    assert np.allclose(out, toy_closed_form(z, Z), rtol=0, atol=1e-12)


# invariance

@given(st.integers(1, 9), st.integers(0, 2**31), st.sampled_from(["sum", "attention"]))
@settings(max_examples=60, deadline=None)
def test_permutation_invariance(n, seed, agg):
    rng = np.random.default_rng(seed)
    m = verify.random_model(rng, 3, 2, 4, agg)
    g = random_complete(rng, n, 3, 2)
    assert invariance_deviation(lambda h: gpi_forward(m, h), g, Permutation.random(n, rng)) <= 1e-10


def test_invariance_with_rho_sees_s_i_and_node_attention():
    rng = np.random.default_rng(4)
    m = GpiModel.create(2, 1, 3, L=5, W=5, aggregation="attention", node_attention=True,
                        rho_sees_s_i=True, seed=4)
    g = random_complete(rng, 7)
    for _ in range(20):
        sigma = Permutation.random(7, rng)
        assert invariance_deviation(lambda h: gpi_forward(m, h), g, sigma) <= 1e-10


def test_automorphism_invariance_on_cycle():
    n = 6
    edges = {(i, (i + 1) % n) for i in range(n)}
    rng = np.random.default_rng(0)
    mask = np.zeros((n, n, 1))
    for i, j in edges:
        mask[i, j] = 1.0
    g = GraphInstance(rng.normal(size=(n, 2)), mask * rng.normal(size=(n, n, 1)), edges)
    m = GpiModel.create(2, 1, 3, L=4, W=4, aggregation="attention", seed=0)
    autos = automorphisms(g)
    assert len(autos) == n
    for a in autos:
        assert invariance_deviation(lambda h: gpi_forward(m, h), g, a) <= 1e-10


def test_path_graph_has_violating_permutation():
    rng = np.random.default_rng(3)
    n = 4
    edges = {(i, i + 1) for i in range(n - 1)} | {(i + 1, i) for i in range(n - 1)}
    pair = np.zeros((n, n, 1))
    for i, j in edges:
        pair[i, j] = 1.0
    g = GraphInstance(rng.normal(size=(n, 2)), pair, edges)
    m = GpiModel.create(2, 1, 3, L=6, W=6, seed=1)
    sigma, dev = verify.non_automorphism_witness(m, g, rng)
    assert sigma is not None and dev > 1e-6
    assert sigma not in automorphisms(g)


def test_automorphism_suite_small():
    assert verify.automorphism_suite(graphs=10, seed=3).ok


# recurrence

def test_recurrent_one_step_is_plain_forward():
    rng = np.random.default_rng(0)
    first = GpiModel.create(2, 1, 3, L=4, W=4, seed=0)
    model = RecurrentGpi(first, GpiModel.create(5, 1, 3, L=4, W=4, seed=1))
    g = random_complete(rng, 5)
    assert np.array_equal(recurrent_gpi(model, g, 1).data, gpi_forward(first, g).data)


def test_recurrent_dimension_chain():
    with pytest.raises(ContractError):
        RecurrentGpi(GpiModel.create(2, 1, 3, seed=0), GpiModel.create(2, 1, 3, seed=0))
    m = RecurrentGpi(GpiModel.create(2, 1, 3, L=4, W=4, seed=0),
                     GpiModel.create(5, 1, 3, L=4, W=4, seed=0))
    with pytest.raises(ContractError):
        recurrent_gpi(m, random_complete(np.random.default_rng(0)), 0)


@pytest.mark.parametrize("steps", [2, 3, 5])
def test_recurrent_invariance(steps):
    rng = np.random.default_rng(steps)
    m = RecurrentGpi(GpiModel.create(2, 1, 3, L=4, W=4, aggregation="attention", seed=1),
                     GpiModel.create(5, 1, 3, L=4, W=4, seed=2))
    g = random_complete(rng, 6)
    for _ in range(10):
        sigma = Permutation.random(6, rng)
        assert invariance_deviation(lambda h: recurrent_gpi(m, h, steps), g, sigma) <= 1e-10


def test_recurrent_linear_toy_two_steps():
    z = np.array([0.3, -0.7, 1.1])
    Z = np.array([[0, 0.2, -0.4], [0.6, 0, 0.1], [-0.3, 0.5, 0]])
    first = toy_model(C=2)
    # step: all-ones phi/alpha over [z, p0, p1]; rho rows for z, p0, p1, G
    step = GpiModel(linear_net(2 * 3 + 1), linear_net(3 + 1),
                    Mlp.from_arrays([np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, -1.0]])],
                                    [np.zeros(2)], "identity"))
    out = recurrent_gpi(RecurrentGpi(first, step), GraphInstance(z, Z), 2).data

    # hand expansion
    n = 3
    G1 = sum(z[i] + sum(z[i] + Z[i, j] + z[j] for j in range(n) if j != i) for i in range(n))
    l1 = np.stack([z + G1, z - G1], axis=1)
    p = np.exp(l1 - l1.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    u = z + p.sum(axis=1)  # sum of the widened node feature vector
    G2 = sum(u[i] + sum(u[i] + Z[i, j] + u[j] for j in range(n) if j != i) for i in range(n))
    expect = np.stack([z + G2 + p[:, 0], z - G2 + p[:, 1]], axis=1)
    assert np.allclose(out, expect, rtol=0, atol=1e-12)


# gradients

def test_full_model_gradients():
    report = verify.gradcheck_suite(graphs=3, seed=11)
    assert report.ok, report.line()


# checkpoints

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = GpiModel.create(2, 1, 3, L=5, W=4, aggregation="attention", node_attention=True,
                        rho_sees_s_i=True, seed=8)
    path = tmp_path / "m.npz"
    save_checkpoint(path, m, extra={"note": "x"})
    back = load_checkpoint(path)
    assert back.config() == m.config()
    for a, b in zip(m.parameters(), back.parameters()):
        assert a.data.tobytes() == b.data.tobytes() and a.shape == b.shape
    g = random_complete(rng, 6)
    assert np.array_equal(gpi_forward(m, g).data, gpi_forward(back, g).data)
    header, _ = read_checkpoint(path)
    assert header["version"] == 1 and header["extra"] == {"note": "x"}
    assert header["nets"]["phi"]["widths"] == [5, 5]
    # saving the loaded model again reproduces the file byte for byte
    again = tmp_path / "again.npz"
    save_checkpoint(again, back, extra={"note": "x"})
    assert again.read_bytes() == path.read_bytes()


def test_recurrent_checkpoint(tmp_path):
    m = RecurrentGpi(GpiModel.create(2, 1, 3, L=4, W=4, seed=1),
                     GpiModel.create(5, 1, 3, L=4, W=4, aggregation="attention", seed=2))
    save_checkpoint(tmp_path / "r.npz", m)
    back = load_checkpoint(tmp_path / "r.npz")
    g = random_complete(np.random.default_rng(1), 5)
    assert np.array_equal(recurrent_gpi(m, g, 3).data, recurrent_gpi(back, g, 3).data)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "foreign.npz"
    header = np.frombuffer(b'{"format": "other", "version": 1}', dtype=np.uint8)
    np.savez(path, __header__=header)
    with pytest.raises(ContractError):
        load_checkpoint(path)


def test_float32_model_forward():
    with T.default_dtype(np.float32):
        m = GpiModel.create(2, 1, 3, L=4, W=4, seed=0)
    g = random_complete(np.random.default_rng(0))
    assert gpi_forward(m, g).dtype == np.float32
