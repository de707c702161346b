"""Tests for dcaps.network (config, build, forward, reconstruction, loss, predict)."""

import dataclasses
import math

import numpy as np
import pytest

from dcaps.capsule_layers import ConvCapsuleSpec
from dcaps.core.errors import ConfigError, DimensionError
from dcaps.network.config import (
    DCapsConfig,
    desk_config,
    full_size_config,
    preset,
    tiny_config,
    toy_config,
)
from dcaps.network.model import ClassOutput, build, predict, predict_scores
from dcaps.numerics.gradcheck import check_parameter_gradients, finite_diff_grad, relative_error
from dcaps.numerics.tensor import Tensor, backward
from dcaps.tests.helpers.config_test_helpers import (
    TINY_SIZE,
    assert_allclose_exact,
    random_images,
    tiny_network_config,
)


def _tiny_net(seed=0, **kwargs):
    return build(tiny_network_config(**kwargs), seed=seed, dtype=np.float64)


def _output(scores, reconstruction=None):
    scores = np.asarray(scores, dtype=np.float64)
    vectors = np.zeros(scores.shape + (1,))
    vectors[..., 0] = scores
    return ClassOutput(Tensor(vectors), Tensor(scores), reconstruction)


# -- config ------------------------------------------------------------------------


def test_full_size_parameter_count_within_budget():
    net = build(full_size_config(), seed=0)
    count = net.parameter_count()
    assert 1.0e6 <= count <= 1.6e6
    assert count == 1_186_243


def test_toy_parameter_count_matches_hand_sum():
    # conv1 5·5·3·8+8; caps 1→2, 2→2 (8 atoms), 2→1 (16 atoms);
    # decoder dense 16→16·20, deconvs 4×4 (1→8, 8→8), 1×1 out 8→3
    expected = (
        (5 * 5 * 3 * 8 + 8)
        + (1 * 25 * 8 * 2 * 8 + 2 * 8)
        + (2 * 25 * 8 * 2 * 8 + 2 * 8)
        + (2 * 25 * 8 * 1 * 16 + 1 * 16)
        + (16 * 320 + 320)
        + (4 * 4 * 1 * 8 + 8)
        + (4 * 4 * 8 * 8 + 8)
        + (8 * 3 + 3)
    )
    assert build(toy_config(), seed=0).parameter_count() == expected == 23291


def test_default_configs_validate():
    for config in (full_size_config(), desk_config(), toy_config(), tiny_config(), toy_config(3)):
        config.validate()


def test_broken_chain_names_offending_layer():
    config = toy_config()
    specs = list(config.layer_specs)
    specs[1] = dataclasses.replace(specs[1], in_types=3)
    with pytest.raises(ConfigError, match="caps2"):
        dataclasses.replace(config, layer_specs=tuple(specs)).validate()


def test_last_layer_must_match_num_classes():
    with pytest.raises(ConfigError, match="num_classes"):
        dataclasses.replace(toy_config(), num_classes=2).validate()


def test_negative_recon_weight_rejected():
    with pytest.raises(ConfigError, match="recon_weight"):
        toy_config().with_recon(True, weight=-0.5).validate()


def test_with_routing_skips_single_type_inputs():
    config = full_size_config().with_routing(5)
    assert [s.routing_iterations for s in config.layer_specs] == [1, 5, 5, 5, 5, 5]


def test_with_routing_rejects_zero():
    with pytest.raises(ConfigError):
        toy_config().with_routing(0)


def test_config_round_trips_through_dict():
    config = tiny_config(num_classes=3, routing=2).with_recon(False, weight=0.25)
    assert DCapsConfig.from_dict(config.to_dict()) == config


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="depth"):
        DCapsConfig.from_dict({"depth": 3})


def test_from_dict_rejects_malformed_layer():
    with pytest.raises(ConfigError, match="malformed"):
        DCapsConfig.from_dict({"layer_specs": [{"kernel": 3, "wings": 2}]})


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown network preset"):
        preset("huge")


def test_grid_extents_follow_stride_arithmetic():
    assert full_size_config().grid_extents() == [
        (256, 320), (128, 160), (64, 80), (32, 40), (16, 20), (8, 10), (4, 5),
    ]


# -- build / forward ------------------------------------------------------------------


def test_same_seed_gives_identical_parameters():
    a, b = _tiny_net(seed=4), _tiny_net(seed=4)
    for pa, pb in zip(a.parameters(), b.parameters(), strict=True):
        assert pa.name == pb.name
        np.testing.assert_array_equal(pa.value.data, pb.value.data)
    c = _tiny_net(seed=5)
    assert not np.array_equal(a.conv_kernel.value.data, c.conv_kernel.value.data)


def test_parameter_names_are_unique():
    names = [p.name for p in build(toy_config(), seed=0).parameters()]
    assert len(names) == len(set(names))


def test_forward_shapes_and_score_range():
    net = _tiny_net()
    images = random_images(np.random.default_rng(0), 3)
    out = net(images)
    assert out.class_vectors.shape == (3, 1, 4)
    assert out.class_scores.shape == (3, 1)
    assert np.all(out.class_scores.data >= 0) and np.all(out.class_scores.data < 1)
    assert_allclose_exact(out.class_scores.data, np.linalg.norm(out.class_vectors.data, axis=-1))
    assert out.reconstruction.shape == (3, *TINY_SIZE, 3)


def test_forward_is_reproducible():
    images = random_images(np.random.default_rng(1), 2)
    first = _tiny_net(seed=9)(images).class_scores.data
    second = _tiny_net(seed=9)(images).class_scores.data
    np.testing.assert_array_equal(first, second)


def test_batch_forward_equals_per_image_forward():
    net = _tiny_net(num_classes=2)
    images = random_images(np.random.default_rng(2), 3)
    batched = net(images).class_vectors.data
    single = np.concatenate([net(images[i:i + 1]).class_vectors.data for i in range(3)])
    assert_allclose_exact(batched, single)


def test_zero_input_with_zeroed_final_layer_scores_zero():
    net = _tiny_net()
    last = net.capsule_layers[-1]
    last.transform.assign(np.zeros(last.transform.shape))
    last.bias.assign(np.zeros(last.bias.shape))
    out = net(np.zeros((2, *TINY_SIZE, 3)), reconstruct=False)
    np.testing.assert_array_equal(out.class_scores.data, np.zeros((2, 1)))
    assert out.reconstruction is None


def test_forward_rejects_wrong_shape():
    with pytest.raises(DimensionError, match="batch shape"):
        _tiny_net()(np.zeros((1, 9, 10, 3)))


def test_float32_default_dtype():
    net = build(tiny_network_config(), seed=0)
    out = net(np.zeros((1, *TINY_SIZE, 3)))
    assert out.class_scores.dtype == np.float32


# -- reconstruction -----------------------------------------------------------------------


def test_reconstruct_zero_vector_is_constant_sigmoid_of_bias():
    net = _tiny_net()
    bias = np.array([0.2, -0.1, 0.3])
    net.recon_out_bias.assign(bias)
    image = net.reconstruct(np.zeros((1, 1, 4))).data
    expected = 1.0 / (1.0 + np.exp(-bias))
    np.testing.assert_allclose(image, np.broadcast_to(expected, (1, *TINY_SIZE, 3)), atol=1e-12)


@pytest.mark.parametrize("config", [toy_config(), tiny_config(9, 11), full_size_config()],
                         ids=["toy", "odd", "full"])
def test_reconstruction_shape_equals_input_shape(config):
    net = build(config, seed=0)
    code = np.zeros((1, config.num_classes, config.output_atoms))
    assert net.reconstruct(code).shape == (1, *config.input_shape)


def test_reconstruction_rejects_wrong_code_length():
    with pytest.raises(DimensionError):
        _tiny_net().reconstruct(np.zeros((1, 5)))


def test_recon_mse_gradient_matches_finite_differences():
    net = _tiny_net()
    image = random_images(np.random.default_rng(3), 1)
    code = np.random.default_rng(4).standard_normal((1, 1, 4)) * 0.3

    def mse(v):
        diff = net.reconstruct(v) - image
        return (diff * diff).mean()

    leaf = Tensor(code.copy(), requires_grad=True)
    backward(mse(leaf))
    numeric = finite_diff_grad(mse, code)
    assert relative_error(leaf.grad, numeric) < 1e-4


# -- loss ----------------------------------------------------------------------------------


def test_bce_at_half_is_ln2():
    net = build(tiny_network_config().with_recon(True, weight=0.0), seed=0, dtype=np.float64)
    loss = net.loss(_output([[0.5]]), [1])
    assert loss.item() == pytest.approx(math.log(2))


def test_bce_confident_positive():
    net = build(tiny_network_config().with_recon(False), seed=0, dtype=np.float64)
    assert net.loss(_output([[0.9]]), [1]).item() == pytest.approx(-math.log(0.9))
    assert net.loss(_output([[0.9]]), [0]).item() == pytest.approx(-math.log(0.1))


def test_bce_clamps_zero_score():
    net = build(tiny_network_config().with_recon(False), seed=0, dtype=np.float64)
    loss = net.loss(_output([[0.0]]), [1]).item()
    assert math.isfinite(loss)
    assert loss == pytest.approx(-math.log(1e-7), rel=1e-6)


def test_perfect_reconstruction_adds_nothing():
    net = _tiny_net()
    image = random_images(np.random.default_rng(5), 1)
    terms = net.loss_terms(_output([[0.5]], Tensor(image)), [0], image)
    assert terms.reconstruction.item() == 0.0
    assert terms.total.item() == pytest.approx(math.log(2))


def test_recon_term_is_weighted():
    net = _tiny_net()
    image = np.ones((1, *TINY_SIZE, 3))
    terms = net.loss_terms(_output([[0.5]], Tensor(np.zeros_like(image))), [1], image)
    assert terms.reconstruction.item() == pytest.approx(1.0)
    assert terms.total.item() == pytest.approx(math.log(2) + 0.1)


def test_recon_disabled_leaves_decoder_gradients_zero():
    net = build(tiny_network_config().with_recon(False), seed=0, dtype=np.float64)
    images = random_images(np.random.default_rng(6), 2)
    backward(net.loss(net(images), [0, 1], images))
    for p in net.decoder_parameters():
        np.testing.assert_array_equal(p.grad, np.zeros(p.shape))
    assert any(np.any(p.grad != 0) for p in net.encoder_parameters())


def test_multiclass_labels_range_checked():
    net = build(tiny_network_config(num_classes=2).with_recon(False), seed=0, dtype=np.float64)
    with pytest.raises(DimensionError, match="labels"):
        net.loss(_output([[0.2, 0.4]]), [2])


def test_label_count_must_match_batch():
    with pytest.raises(DimensionError):
        _tiny_net().loss(_output([[0.2], [0.3]]), [1])


def test_end_to_end_parameter_gradients():
    net = _tiny_net(routing=3)
    rng = np.random.default_rng(7)
    images = random_images(rng, 2)

    def loss():
        return net.loss(net(images), [0, 1], images)

    errors = check_parameter_gradients(loss, net.parameters(), rng, max_probes=3)
    assert set(errors) == set(net.named_parameters())
    assert max(errors.values()) < 1e-4


# -- predict ---------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "scores,expected_class,expected_confidence",
    [
        ([0.5], 1, 0.0),
        ([0.0], 0, 1.0),
        ([0.9], 1, 0.8),
        ([0.2], 0, 0.6),
        ([0.9, 0.3], 0, 2 / 3),
        ([0.1, 0.4, 0.2], 1, 0.5),
        ([0.0, 0.0], 0, 0.0),
    ],
)
def test_predict_scores(scores, expected_class, expected_confidence):
    cls, confidence = predict_scores(scores)
    assert cls == expected_class
    assert confidence == pytest.approx(expected_confidence)


def test_predict_is_invariant_under_monotone_transform():
    scores = np.random.default_rng(8).uniform(0, 1, size=(20, 3))
    before = [c for c, _ in predict(_output(scores))]
    after = [c for c, _ in predict(_output(np.sqrt(scores) * 0.5 + 0.1))]
    assert before == after


def test_default_capsule_kernels_are_odd():
    for spec in full_size_config().layer_specs:
        assert isinstance(spec, ConvCapsuleSpec)
        assert spec.kernel % 2 == 1
