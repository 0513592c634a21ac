"""Network forward pass and hand-rolled gradients."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pasdf.errors import InvalidInputError, InvalidParameterError
from pasdf.network import (
    NetworkConfig,
    ParameterSet,
    SdfModel,
    clamped_l1_loss,
    loss_and_gradients,
)


def finite_difference_gradients(
    model: SdfModel,
    encoded: np.ndarray,
    targets: np.ndarray,
    d_max: float,
    h: float = 1e-5,
) -> np.ndarray:
    """Central differences of the loss through the full forward pass."""
    flat = model.params.flatten()
    grads = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += h
        model.params.overwrite_from_flat(bumped)
        loss_up = clamped_l1_loss(model.forward(encoded), targets, d_max)
        bumped[i] -= 2 * h
        model.params.overwrite_from_flat(bumped)
        loss_down = clamped_l1_loss(model.forward(encoded), targets, d_max)
        grads[i] = (loss_up - loss_down) / (2 * h)
    model.params.overwrite_from_flat(flat)
    return grads


def assert_matches_finite_differences(
    config: NetworkConfig, seed: int, d_max: float = 5.0, batch: int = 16
) -> None:
    model = SdfModel.init(config, seed)
    rng = np.random.default_rng(seed + 1)
    encoded = rng.normal(0.0, 0.7, size=(batch, config.input_dim))
    targets = rng.normal(0.0, 0.5, size=batch)
    _, grads = loss_and_gradients(model, encoded, targets, d_max)
    fd = finite_difference_gradients(model, encoded, targets, d_max)
    analytic = grads.flatten()
    err = np.abs(analytic - fd)
    tol = np.maximum(1e-7, 1e-4 * np.abs(fd))
    assert (err <= tol).all(), f"gradient mismatch: worst abs err {err.max():.3e}"


class TestNetworkConfig:
    def test_default_layer_shapes(self) -> None:
        shapes = NetworkConfig().layer_shapes()
        assert len(shapes) == 8
        assert shapes[0] == (512, 39)
        assert shapes[4] == (512, 512 + 39)
        assert shapes[-1] == (1, 512)
        assert all(s == (512, 512) for s in shapes[1:4] + shapes[5:7])

    def test_no_skip_shapes(self) -> None:
        shapes = NetworkConfig(
            input_dim=9, hidden_width=8, num_layers=2, skip_layer=None
        ).layer_shapes()
        assert shapes == [(8, 9), (1, 8)]

    def test_validation(self) -> None:
        with pytest.raises(InvalidParameterError):
            NetworkConfig(num_layers=1)
        with pytest.raises(InvalidParameterError):
            NetworkConfig(skip_layer=0)
        with pytest.raises(InvalidParameterError):
            NetworkConfig(num_layers=4, skip_layer=4)
        with pytest.raises(InvalidParameterError):
            NetworkConfig(dropout=1.0)
        with pytest.raises(InvalidParameterError):
            NetworkConfig(hidden_width=0)

    def test_dict_round_trip(self) -> None:
        cfg = NetworkConfig(input_dim=9, hidden_width=8, num_layers=3, skip_layer=None)
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


def tiny_config(**overrides) -> NetworkConfig:
    base = dict(input_dim=9, hidden_width=8, num_layers=2, skip_layer=None, dropout=0.0)
    base.update(overrides)
    return NetworkConfig(**base)


class TestForward:
    def test_zero_gains_collapse_to_final_bias(self) -> None:
        model = SdfModel.init(tiny_config(num_layers=3, skip_layer=1), seed=0)
        for g in model.params.gains:
            g[...] = 0.0
        x = np.random.default_rng(1).normal(size=(5, 9))
        assert np.all(model.forward(x) == 0.0)
        model.params.biases[-1][...] = 0.25
        assert np.all(model.forward(x) == 0.25)

    def test_eval_forward_is_pure_and_deterministic(self) -> None:
        model = SdfModel.init(tiny_config(dropout=0.2), seed=3)
        before = model.params.flatten().copy()
        x = np.random.default_rng(2).normal(size=(11, 9))
        first = model.forward(x)
        second = model.forward(x)
        np.testing.assert_array_equal(first, second)
        np.testing.assert_array_equal(model.params.flatten(), before)

    def test_direction_row_scaling_leaves_output_unchanged(self) -> None:
        model = SdfModel.init(tiny_config(num_layers=4, skip_layer=2), seed=4)
        x = np.random.default_rng(3).normal(size=(6, 9))
        base = model.forward(x)
        model.params.directions[1][2] *= 37.5
        model.params.directions[0][0] *= 1e-3
        np.testing.assert_allclose(model.forward(x), base, atol=1e-9)

    def test_training_mode_requires_rng_with_dropout(self) -> None:
        model = SdfModel.init(tiny_config(dropout=0.5), seed=0)
        x = np.zeros((2, 9))
        with pytest.raises(InvalidParameterError, match="rng"):
            model.forward(x, training=True)
        # Without dropout the rng is not needed.
        no_drop = SdfModel.init(tiny_config(), seed=0)
        no_drop.forward(x, training=True)

    def test_dropout_expectation_matches_eval_forward(self) -> None:
        # With one hidden layer the output is linear in the masked
        # activations, so inverted dropout is unbiased exactly.
        model = SdfModel.init(tiny_config(hidden_width=16, dropout=0.3), seed=5)
        x = np.random.default_rng(4).normal(size=(4, 9))
        rng = np.random.default_rng(99)
        draws = np.stack([model.forward(x, training=True, rng=rng) for _ in range(4000)])
        np.testing.assert_allclose(draws.mean(axis=0), model.forward(x), atol=0.05)

    def test_rejects_wrong_input_width(self) -> None:
        model = SdfModel.init(tiny_config(), seed=0)
        with pytest.raises(InvalidInputError, match="shape"):
            model.forward(np.zeros((3, 7)))

    def test_collapsed_direction_row_is_an_error(self) -> None:
        model = SdfModel.init(tiny_config(), seed=0)
        model.params.directions[0][1] = 0.0
        with pytest.raises(InvalidInputError, match="norm"):
            model.forward(np.zeros((1, 9)))

    def test_init_effective_weights_equal_raw_draw(self) -> None:
        # Gains are set to row norms, so weight-norm reproduces the
        # Gaussian draw bit-for-bit at init.
        model = SdfModel.init(tiny_config(num_layers=3, skip_layer=1), seed=8)
        for weight, direction in zip(model.effective_weights(), model.params.directions):
            np.testing.assert_allclose(weight, direction, rtol=1e-14)


class TestClampedL1:
    def test_zero_residual(self) -> None:
        assert clamped_l1_loss(np.array([0.03]), np.array([0.03]), 0.1) == 0.0

    def test_clamp_hits_prediction_only(self) -> None:
        assert clamped_l1_loss(np.array([0.5]), np.array([0.05]), 0.1) == pytest.approx(0.05)
        assert clamped_l1_loss(np.array([-0.2]), np.array([-0.15]), 0.1) == pytest.approx(0.05)
        # A target beyond the clamp is not touched.
        assert clamped_l1_loss(np.array([0.5]), np.array([0.4]), 0.1) == pytest.approx(0.3)

    def test_batch_mean(self) -> None:
        pred = np.array([0.0, 0.2])
        target = np.array([0.05, 0.05])
        assert clamped_l1_loss(pred, target, 0.1) == pytest.approx((0.05 + 0.05) / 2)

    def test_rejects_bad_d_max(self) -> None:
        with pytest.raises(InvalidParameterError):
            clamped_l1_loss(np.zeros(1), np.zeros(1), 0.0)


class TestGradients:
    def test_matches_finite_differences_tiny_probe(self) -> None:
        assert_matches_finite_differences(tiny_config(), seed=11)

    def test_matches_finite_differences_with_skip(self) -> None:
        assert_matches_finite_differences(
            tiny_config(num_layers=5, skip_layer=2, hidden_width=8), seed=12
        )

    def test_matches_finite_differences_skip_at_last_layer(self) -> None:
        assert_matches_finite_differences(
            tiny_config(num_layers=3, skip_layer=2, hidden_width=8), seed=13
        )

    def test_matches_finite_differences_wide_input_probe(self) -> None:
        assert_matches_finite_differences(
            NetworkConfig(input_dim=39, hidden_width=16, num_layers=4, skip_layer=2, dropout=0.0),
            seed=14,
        )

    def test_saturated_clamp_zeroes_every_gradient(self) -> None:
        model = SdfModel.init(tiny_config(), seed=15)
        x = np.random.default_rng(6).normal(size=(8, 9))
        out = model.forward(x)
        # d_max far below every |prediction| saturates the whole batch.
        d_max = np.abs(out).min() / 2.0
        targets = np.zeros(8)
        _, grads = loss_and_gradients(model, x, targets, float(d_max))
        assert np.all(grads.flatten() == 0.0)

    def test_duplicated_batch_leaves_gradients_unchanged(self) -> None:
        model = SdfModel.init(tiny_config(num_layers=4, skip_layer=2), seed=16)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(10, 9))
        y = rng.normal(size=10)
        _, once = loss_and_gradients(model, x, y, 5.0)
        _, twice = loss_and_gradients(model, np.vstack([x, x]), np.concatenate([y, y]), 5.0)
        np.testing.assert_allclose(once.flatten(), twice.flatten(), atol=1e-15)

    def test_dropout_gradients_deterministic_per_stream(self) -> None:
        model = SdfModel.init(tiny_config(dropout=0.4), seed=17)
        rng = np.random.default_rng(8)
        x = rng.normal(size=(12, 9))
        y = rng.normal(size=12)
        loss_a, grads_a = loss_and_gradients(
            model, x, y, 5.0, training=True, rng=np.random.default_rng(55)
        )
        loss_b, grads_b = loss_and_gradients(
            model, x, y, 5.0, training=True, rng=np.random.default_rng(55)
        )
        assert loss_a == loss_b
        np.testing.assert_array_equal(grads_a.flatten(), grads_b.flatten())

    def test_rejects_empty_batch(self) -> None:
        model = SdfModel.init(tiny_config(), seed=0)
        with pytest.raises(InvalidInputError):
            loss_and_gradients(model, np.zeros((0, 9)), np.zeros(0), 0.1)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10)
    def test_gradient_check_random_parameter_points(self, seed: int) -> None:
        assert_matches_finite_differences(
            tiny_config(num_layers=3, skip_layer=1, hidden_width=6), seed=seed, batch=6
        )


class TestParameterSet:
    def test_flatten_round_trip(self) -> None:
        model = SdfModel.init(tiny_config(num_layers=3, skip_layer=1), seed=20)
        flat = model.params.flatten()
        clone = SdfModel.init(tiny_config(num_layers=3, skip_layer=1), seed=21)
        clone.params.overwrite_from_flat(flat)
        np.testing.assert_array_equal(clone.params.flatten(), flat)

    def test_overwrite_rejects_wrong_length(self) -> None:
        model = SdfModel.init(tiny_config(), seed=0)
        with pytest.raises(InvalidInputError):
            model.params.overwrite_from_flat(np.zeros(3))

    def test_zeros_like_matches_shapes(self) -> None:
        model = SdfModel.init(tiny_config(num_layers=4, skip_layer=3), seed=1)
        zeros = ParameterSet.zeros_like(model.params)
        for a, b in zip(zeros.arrays(), model.params.arrays()):
            assert a.shape == b.shape
            assert np.all(a == 0.0)
