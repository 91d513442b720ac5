import numpy as np
import pytest

from geokd import tensor as T
from geokd.errors import DimensionError, ValidationError
from geokd.graphs import Graph, normalize_adjacency, sbm_generate
from geokd.models import (
    GnnModel,
    accuracy,
    build_model,
    forward,
    init_xavier,
    sgc_euler_equivalence,
)


@pytest.fixture
def graph():
    return sbm_generate([5, 5], 0.5, 0.2, 4, 0.4, 0)


# --------------------------------------------------------------------------
# construction and initialization


def test_build_model_shapes():
    gcn = build_model("gcn", 8, 16, 3, 4)
    assert gcn.dims == [8, 16, 16, 4]
    assert [w.shape for w in gcn.weights] == [(8, 16), (16, 16), (16, 4)]
    sgc = build_model("sgc", 8, 16, 3, 4)
    assert sgc.dims == [8, 8, 8, 4]
    assert len(sgc.weights) == 1


def test_sgc_requires_uniform_propagation_dims():
    with pytest.raises(ValidationError):
        GnnModel("sgc", [4, 8, 2])


def test_xavier_support_bound():
    model = build_model("gcn", 6, 8, 2, 3)
    init_xavier(model, 0)
    for w in model.weights:
        bound = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.max(np.abs(w.values)) <= bound


def test_xavier_deterministic():
    a = build_model("gcn", 6, 8, 2, 3)
    b = build_model("gcn", 6, 8, 2, 3)
    init_xavier(a, 5)
    init_xavier(b, 5)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa.values, wb.values)


def test_xavier_sample_mean_near_zero():
    model = GnnModel("gcn", [64, 64])
    init_xavier(model, 1)
    w = model.weights[0].values
    a = np.sqrt(6.0 / 128)
    sigma_mean = (a / np.sqrt(3.0)) / np.sqrt(w.size)
    assert abs(w.mean()) < 3 * sigma_mean


# --------------------------------------------------------------------------
# forward


def test_forward_edgeless_single_layer_is_linear():
    feats = np.random.default_rng(2).normal(size=(4, 3))
    g = Graph(4, [], feats, [0, 1, 0, 1], [0, 1], [2], [3])
    model = GnnModel("gcn", [3, 2])
    init_xavier(model, 3)
    logits, trace = forward(model, g)
    np.testing.assert_allclose(logits.values, feats @ model.weights[0].values, atol=1e-15)
    assert len(trace) == 2
    np.testing.assert_array_equal(trace[0].values, feats)


def test_forward_zero_weights_zero_logits(graph):
    model = build_model("gcn", 4, 8, 3, 2)
    logits, _ = forward(model, graph)
    assert np.all(logits.values == 0.0)


def test_forward_feature_dim_mismatch(graph):
    model = build_model("gcn", 7, 8, 2, 2)
    with pytest.raises(DimensionError):
        forward(model, graph)


def test_sgc_matches_dense_propagation(graph):
    model = GnnModel("sgc", [4, 4, 4], [T.Tensor(np.eye(4))])
    logits, trace = forward(model, graph)
    a = normalize_adjacency(graph).densify()
    expected = a @ (a @ graph.features.values)
    assert np.max(np.abs(logits.values - expected)) < 1e-12
    assert len(trace) == 3


def test_gcn_trace_is_post_activation(graph):
    model = build_model("gcn", 4, 8, 2, 2)
    init_xavier(model, 4)
    _, trace = forward(model, graph)
    assert len(trace) == 3
    assert np.all(trace[1].values >= 0.0)  # relu output


def test_forward_permutation_equivariance(graph):
    model = build_model("gcn", 4, 8, 3, 2)
    init_xavier(model, 5)
    logits, _ = forward(model, graph)
    rng = np.random.default_rng(6)
    perm = rng.permutation(graph.num_nodes)
    inv = np.argsort(perm)
    g2 = Graph(
        graph.num_nodes,
        [(min(inv[u], inv[v]), max(inv[u], inv[v])) for u, v in graph.edges],
        graph.features.values[perm],
        graph.labels[perm],
        inv[graph.train_mask],
        inv[graph.val_mask],
        inv[graph.test_mask],
    )
    logits2, _ = forward(model, g2)
    np.testing.assert_allclose(logits2.values, logits.values[perm], atol=1e-12)


def test_forward_pure_function(graph):
    model = build_model("gcn", 4, 8, 2, 2)
    init_xavier(model, 7)
    first, _ = forward(model, graph)
    second, _ = forward(model, graph)
    np.testing.assert_array_equal(first.values, second.values)


def test_accuracy_helper():
    logits = np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 0.0]])
    labels = np.array([0, 1, 1])
    assert accuracy(logits, labels, np.array([0, 1, 2])) == pytest.approx(2 / 3)


# --------------------------------------------------------------------------
# Euler correspondence


def test_euler_zero_steps(graph):
    x0 = np.random.default_rng(8).normal(size=(graph.num_nodes, 3))
    assert sgc_euler_equivalence(graph, x0, 0) == 0.0


def test_euler_matches_propagation(graph):
    x0 = np.random.default_rng(9).normal(size=(graph.num_nodes, 3))
    assert sgc_euler_equivalence(graph, x0, 3) < 1e-12


def test_euler_deviation_scale_invariant(graph):
    x0 = np.random.default_rng(10).normal(size=(graph.num_nodes, 2))
    d1 = sgc_euler_equivalence(graph, x0, 2)
    d2 = sgc_euler_equivalence(graph, 1000.0 * x0, 2)
    assert d2 < 1e-9  # linearity: deviation stays at rounding level


def test_euler_rejects_negative_steps(graph):
    with pytest.raises(ValidationError):
        sgc_euler_equivalence(graph, np.zeros((graph.num_nodes, 1)), -1)


# --------------------------------------------------------------------------
# checkpointing


def test_checkpoint_roundtrip(tmp_path):
    model = build_model("gcn", 5, 7, 2, 3)
    init_xavier(model, 11)
    path = tmp_path / "model.json"
    model.save(path)
    loaded = GnnModel.load(path)
    assert loaded.kind == model.kind
    assert loaded.dims == model.dims
    for wa, wb in zip(loaded.weights, model.weights):
        np.testing.assert_array_equal(wa.values, wb.values)
