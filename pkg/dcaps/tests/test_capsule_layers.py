"""Tests for dcaps.capsule_layers (prediction forming, routing, pooling)."""

import math

import numpy as np
import pytest

from dcaps.capsule_layers import (
    CapsuleGrid,
    ConvCapsuleLayer,
    ConvCapsuleSpec,
    RoutingState,
    capsule_average_pool,
    conv_capsule_forward,
    dynamic_route,
    form_predictions,
    magnitudes,
)
from dcaps.core.errors import ConfigError, DimensionError
from dcaps.numerics.gradcheck import check_gradients
from dcaps.numerics.tensor import Tensor
from dcaps.tests.helpers.config_test_helpers import assert_allclose_exact


def _squash_vec(s):
    sq = float(np.dot(s, s))
    if sq == 0.0:
        return np.zeros_like(s)
    return (sq / (1.0 + sq)) * s / math.sqrt(sq)


def _straight_line_layer(acts, transforms, bias, kernel, stride, out_types, out_atoms, iterations):
    """Loop-by-loop conv capsule layer used as an oracle for the vectorised one."""
    batch, h, w, n_in, _ = acts.shape
    out_h, out_w = math.ceil(h / stride), math.ceil(w / stride)
    top = max((out_h - 1) * stride + kernel - h, 0) // 2
    left = max((out_w - 1) * stride + kernel - w, 0) // 2
    out = np.zeros((batch, out_h, out_w, out_types, out_atoms))
    for b in range(batch):
        for py in range(out_h):
            for px in range(out_w):
                votes = []
                for i in range(n_in):
                    for dy in range(kernel):
                        for dx in range(kernel):
                            y, x = py * stride + dy - top, px * stride + dx - left
                            if 0 <= y < h and 0 <= x < w:
                                child = acts[b, y, x, i]
                            else:
                                child = np.zeros(acts.shape[4])
                            votes.append((child @ transforms[i, dy, dx]).reshape(out_types, out_atoms))
                logits = np.zeros((len(votes), out_types))
                for it in range(iterations):
                    parents = []
                    for t in range(out_types):
                        s = np.array(bias[t], dtype=np.float64)
                        for c, u in enumerate(votes):
                            coupling = math.exp(logits[c, t]) / sum(math.exp(v) for v in logits[c])
                            s = s + coupling * u[t]
                        parents.append(_squash_vec(s))
                    if it < iterations - 1:
                        for c, u in enumerate(votes):
                            for t in range(out_types):
                                logits[c, t] += float(np.dot(u[t], parents[t]))
                out[b, py, px] = np.array(parents)
    return out


# -- CapsuleGrid / ConvCapsuleSpec ----------------------------------------------------------


def test_grid_rank_is_checked():
    with pytest.raises(DimensionError):
        CapsuleGrid(Tensor(np.zeros((1, 2, 2, 4))))


def test_grid_from_feature_map():
    grid = CapsuleGrid.from_feature_map(Tensor(np.zeros((2, 3, 4, 8))))
    assert (grid.batch, grid.height, grid.width, grid.num_types, grid.atom_dim) == (2, 3, 4, 1, 8)


@pytest.mark.parametrize(
    "kwargs,match",
    [
        ({"kernel": 4}, "kernel"),
        ({"stride": 0}, "stride"),
        ({"out_types": 0}, "out_types"),
        ({"routing_iterations": 0}, "routing_iterations"),
    ],
)
def test_spec_validation(kwargs, match):
    base = dict(kernel=3, stride=1, in_types=2, out_types=2, in_atoms=4, out_atoms=4)
    base.update(kwargs)
    with pytest.raises(ConfigError, match=match):
        ConvCapsuleSpec(**base).validate()


# -- form_predictions -------------------------------------------------------------


def test_identity_transform_reproduces_children():
    acts = np.random.default_rng(0).standard_normal((1, 2, 3, 1, 4))
    spec = ConvCapsuleSpec(1, 1, 1, 1, 4, 4)
    w = np.eye(4).reshape(spec.transform_shape)
    u = form_predictions(CapsuleGrid(Tensor(acts)), spec, Tensor(w))
    assert u.shape == (1, 2, 3, 1, 1, 4)
    assert_allclose_exact(u.data[:, :, :, 0, 0, :], acts[:, :, :, 0, :])


def test_scaled_identity_transform():
    spec = ConvCapsuleSpec(1, 1, 1, 1, 2, 2)
    acts = np.array([1.0, 0.0]).reshape(1, 1, 1, 1, 2)
    w = (2 * np.eye(2)).reshape(spec.transform_shape)
    u = form_predictions(CapsuleGrid(Tensor(acts)), spec, Tensor(w))
    np.testing.assert_array_equal(u.data.reshape(2), [2.0, 0.0])


def test_centre_parent_sees_full_window():
    spec = ConvCapsuleSpec(3, 1, 1, 1, 2, 2)
    w = np.broadcast_to(np.eye(2), (1, 3, 3, 2, 2)).copy()
    u = form_predictions(CapsuleGrid(Tensor(np.ones((1, 3, 3, 1, 2)))), spec, Tensor(w))
    assert u.shape == (1, 3, 3, 9, 1, 2)
    np.testing.assert_array_equal(u.data[0, 1, 1, :, 0, :], np.ones((9, 2)))
    # the corner parent has five zero-padded children
    assert np.count_nonzero(u.data[0, 0, 0, :, 0, 0]) == 4


def test_form_predictions_type_mismatch():
    spec = ConvCapsuleSpec(3, 1, 2, 1, 4, 4)
    with pytest.raises(DimensionError, match="types"):
        form_predictions(CapsuleGrid(Tensor(np.zeros((1, 3, 3, 1, 4)))), spec,
                         Tensor(np.zeros(spec.transform_shape)))


def test_form_predictions_transform_shape_checked():
    spec = ConvCapsuleSpec(3, 1, 1, 1, 4, 4)
    with pytest.raises(DimensionError, match="transform"):
        form_predictions(CapsuleGrid(Tensor(np.zeros((1, 3, 3, 1, 4)))), spec,
                         Tensor(np.zeros((1, 1, 1, 4, 4))))


# -- dynamic_route ------------------------------------------------------------------


@pytest.mark.parametrize("iterations", [1, 2, 3, 5])
def test_single_child_single_type_is_squash(iterations):
    u = np.array([0.3, -1.2, 0.4]).reshape(1, 1, 1, 1, 1, 3)
    out = dynamic_route(Tensor(u), iterations)
    assert_allclose_exact(out.activations.data.reshape(3), _squash_vec(u.reshape(3)))


def test_one_iteration_is_uniform_coupling():
    u = np.random.default_rng(1).standard_normal((2, 2, 2, 5, 2, 3))
    out = dynamic_route(Tensor(u), 1).activations.data
    expected = np.zeros((2, 2, 2, 2, 3))
    for idx in np.ndindex(2, 2, 2, 2):
        b, y, x, t = idx
        expected[idx] = _squash_vec(0.5 * u[b, y, x, :, t, :].sum(axis=0))
    assert_allclose_exact(out, expected)


def test_couplings_start_uniform_and_stay_normalized():
    u = np.random.default_rng(2).standard_normal((1, 2, 2, 6, 4, 3))
    trace: list[RoutingState] = []
    dynamic_route(Tensor(u), 4, trace=trace)
    assert len(trace) == 4
    np.testing.assert_array_equal(trace[0].logits, np.zeros((1, 2, 2, 6, 4)))
    np.testing.assert_allclose(trace[0].couplings, 0.25)
    for state in trace:
        np.testing.assert_allclose(state.couplings.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(state.couplings >= 0)


def test_agreement_raises_coupling():
    u = np.zeros((1, 1, 1, 2, 2, 2))
    u[0, 0, 0, 0, 0] = [1.0, 0.0]
    u[0, 0, 0, 1, 0] = [1.0, 0.0]
    u[0, 0, 0, 0, 1] = [1.0, 0.0]
    u[0, 0, 0, 1, 1] = [-1.0, 0.0]
    trace: list[RoutingState] = []
    parents = dynamic_route(Tensor(u), 3, trace=trace).activations.data[0, 0, 0]
    assert np.linalg.norm(parents[0]) > np.linalg.norm(parents[1])
    assert np.all(trace[-1].couplings[0, 0, 0, :, 0] > 0.5)


def test_route_rejects_zero_iterations():
    with pytest.raises(ConfigError):
        dynamic_route(Tensor(np.zeros((1, 1, 1, 1, 1, 2))), 0)


def test_route_rejects_wrong_rank():
    with pytest.raises(DimensionError):
        dynamic_route(Tensor(np.zeros((1, 1, 1, 2))), 1)


@pytest.mark.parametrize("iterations", [1, 3])
def test_route_gradients_flow_through_iterations(iterations):
    rng = np.random.default_rng(iterations)
    u = rng.standard_normal((1, 2, 2, 4, 3, 2))
    err = check_gradients(lambda t: dynamic_route(t, iterations).activations, [u], rng)
    assert err < 1e-6


# -- conv_capsule_forward -----------------------------------------------------------


def test_one_by_one_identity_layer_is_squash_of_child():
    spec = ConvCapsuleSpec(1, 1, 1, 1, 2, 2, routing_iterations=1)
    acts = np.array([0.6, 0.8]).reshape(1, 1, 1, 1, 2)
    out = conv_capsule_forward(CapsuleGrid(Tensor(acts)), spec,
                               Tensor(np.eye(2).reshape(spec.transform_shape)), None)
    np.testing.assert_allclose(out.activations.data.reshape(2), [0.3, 0.4])


def test_stride_two_halves_the_grid():
    spec = ConvCapsuleSpec(3, 2, 1, 2, 4, 3)
    rng = np.random.default_rng(3)
    out = conv_capsule_forward(
        CapsuleGrid(Tensor(rng.standard_normal((2, 4, 4, 1, 4)))),
        spec, Tensor(rng.standard_normal(spec.transform_shape)), Tensor(np.zeros(spec.bias_shape)),
    )
    assert out.activations.shape == (2, 2, 2, 2, 3)


@pytest.mark.parametrize("stride,iterations", [(1, 1), (1, 3), (2, 3)])
def test_layer_matches_straight_line_reimplementation(stride, iterations):
    rng = np.random.default_rng(10 + stride + iterations)
    spec = ConvCapsuleSpec(3, stride, 2, 2, 3, 4, routing_iterations=iterations)
    acts = rng.standard_normal((1, 3, 3, 2, 3)) * 0.5
    transforms = rng.standard_normal(spec.transform_shape) * 0.5
    bias = rng.standard_normal(spec.bias_shape) * 0.1
    out = conv_capsule_forward(CapsuleGrid(Tensor(acts)), spec, Tensor(transforms), Tensor(bias))
    expected = _straight_line_layer(acts, transforms, bias, 3, stride, 2, 4, iterations)
    assert_allclose_exact(out.activations.data, expected)


def test_layer_owns_named_parameters():
    layer = ConvCapsuleLayer("caps2", ConvCapsuleSpec(5, 1, 2, 4, 16, 16), np.random.default_rng(0))
    names = [p.name for p in layer.parameters()]
    assert names == ["caps2.transform", "caps2.bias"]
    assert layer.transform.shape == (2, 5, 5, 16, 64)
    assert layer.bias.shape == (4, 16)
    out = layer(CapsuleGrid(Tensor(np.zeros((1, 4, 4, 2, 16), dtype=np.float32))))
    assert out.activations.shape == (1, 4, 4, 4, 16)


def test_layer_validates_spec():
    with pytest.raises(ConfigError, match="caps9"):
        ConvCapsuleLayer("caps9", ConvCapsuleSpec(2, 1, 1, 1, 4, 4), np.random.default_rng(0))


# -- pooling and scoring --------------------------------------------------------------


def test_average_pool_hand_example():
    acts = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 3.0]]).reshape(1, 2, 2, 1, 2)
    pooled = capsule_average_pool(CapsuleGrid(Tensor(acts)))
    assert pooled.shape == (1, 1, 2)
    np.testing.assert_allclose(pooled.data.reshape(2), [1.0, 1.25])


def test_average_pool_constant_grid_and_single_cell():
    v = np.array([0.2, -0.4, 0.1])
    grid = np.broadcast_to(v, (1, 3, 5, 1, 3)).copy()
    np.testing.assert_allclose(capsule_average_pool(CapsuleGrid(Tensor(grid))).data[0, 0], v)
    single = np.random.default_rng(4).standard_normal((1, 1, 1, 3, 2))
    assert_allclose_exact(capsule_average_pool(CapsuleGrid(Tensor(single))).data, single[:, 0, 0])


def test_average_pool_is_permutation_invariant_and_linear():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((1, 3, 4, 2, 3))
    b = rng.standard_normal((1, 3, 4, 2, 3))
    pool = lambda x: capsule_average_pool(CapsuleGrid(Tensor(x))).data  # noqa: E731

    flat = a.reshape(1, 12, 2, 3)
    shuffled = flat[:, rng.permutation(12)].reshape(1, 3, 4, 2, 3)
    np.testing.assert_allclose(pool(shuffled), pool(a), atol=1e-12)
    np.testing.assert_allclose(pool(2.0 * a + 3.0 * b), 2.0 * pool(a) + 3.0 * pool(b), atol=1e-12)


def test_magnitudes_examples():
    np.testing.assert_allclose(magnitudes(Tensor([[0.0, 0.0]])).data, [0.0])
    np.testing.assert_allclose(magnitudes(Tensor([[0.3, 0.4], [0.1, 0.0]])).data, [0.5, 0.1])


def test_routed_magnitudes_are_below_one():
    rng = np.random.default_rng(6)
    u = rng.standard_normal((2, 3, 3, 4, 2, 5)) * 10
    grid = dynamic_route(Tensor(u), 3)
    scores = magnitudes(capsule_average_pool(grid)).data
    assert np.all(scores >= 0) and np.all(scores < 1)


@pytest.mark.parametrize("dy,dx", [(1, 0), (0, 2), (1, 1)])
def test_shifting_children_by_the_stride_shifts_the_parents(dy, dx):
    rng = np.random.default_rng(20 + 3 * dy + dx)
    spec = ConvCapsuleSpec(3, 2, 2, 3, 3, 4, routing_iterations=3)
    transforms = Tensor(rng.standard_normal(spec.transform_shape))
    bias = Tensor(0.1 * rng.standard_normal(spec.bias_shape))
    content = rng.standard_normal((1, 4, 4, 2, 3))

    def parents(top, left):
        grid = np.zeros((1, 16, 16, 2, 3))
        grid[:, top:top + 4, left:left + 4] = content
        return conv_capsule_forward(CapsuleGrid(Tensor(grid)), spec, transforms, bias).activations.data

    out = parents(4, 4)
    moved = parents(4 + 2 * dy, 4 + 2 * dx)
    h, w = out.shape[1:3]
    np.testing.assert_allclose(moved[:, dy:, dx:], out[:, :h - dy, :w - dx], rtol=0, atol=1e-10)
    assert not np.allclose(moved, out)


def test_magnitudes_warn_when_a_capsule_is_not_below_one(caplog):
    with caplog.at_level("WARNING", logger="dcaps.capsule_layers"):
        np.testing.assert_allclose(magnitudes(Tensor([[0.6, 0.8], [0.3, 0.4]])).data, [1.0, 0.5])
    assert "not below 1" in caplog.text


def test_magnitudes_of_routed_capsules_do_not_warn(caplog):
    rng = np.random.default_rng(7)
    with caplog.at_level("WARNING", logger="dcaps.capsule_layers"):
        magnitudes(capsule_average_pool(dynamic_route(Tensor(rng.standard_normal((1, 2, 2, 3, 2, 4))), 3)))
    assert caplog.records == []
