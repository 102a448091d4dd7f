import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmcon.errors import DegenerateEmbedding, DimensionMismatch, NonFiniteLoss, ValidationError
from mmcon.numerics import (
    EncoderParams,
    encoder_backward,
    encoder_forward,
    finite_difference_check,
    init_encoder,
    numeric_gradient,
    relative_error,
    sgd_step,
)


def _identity_net(normalize=False):
    return EncoderParams([np.eye(2)], [np.zeros(2)], "relu", normalize)


def _loop_forward(params, x):
    """Scalar-loop re-evaluation of the affine/activation chain."""
    h = [float(v) for v in x]
    n_layers = len(params.weights)
    for li, (W, b) in enumerate(zip(params.weights, params.biases)):
        out = []
        for r in range(W.shape[0]):
            s = float(b[r])
            for c in range(W.shape[1]):
                s += float(W[r, c]) * h[c]
            if li < n_layers - 1:
                s = max(s, 0.0) if params.activation == "relu" else math.tanh(s)
            out.append(s)
        h = out
    if params.normalize_output:
        norm = math.sqrt(sum(v * v for v in h))
        h = [v / norm for v in h]
    return np.array(h)


class TestEncoderForward:
    def test_identity_network(self):
        np.testing.assert_array_equal(encoder_forward(_identity_net(), [1.0, 2.0]), [1.0, 2.0])

    def test_normalizes_to_unit_length(self):
        params = EncoderParams([np.diag([3.0, 4.0])], [np.zeros(2)], "relu", True)
        np.testing.assert_allclose(encoder_forward(params, [1.0, 1.0]), [0.6, 0.8], atol=1e-15)

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    @pytest.mark.parametrize("normalize", [False, True])
    def test_matches_loop_reimplementation(self, activation, normalize):
        rng = np.random.default_rng(7)
        for _ in range(10):
            params = init_encoder((5, 7, 3), activation, normalize, seed=rng)
            params.biases = [rng.normal(size=b.shape) for b in params.biases]
            x = rng.normal(size=5)
            np.testing.assert_allclose(encoder_forward(params, x), _loop_forward(params, x), rtol=0, atol=1e-12)

    def test_batch_rows_match_single_calls(self):
        rng = np.random.default_rng(1)
        params = init_encoder((4, 6, 3), seed=2)
        X = rng.normal(size=(5, 4))
        batch = encoder_forward(params, X)
        for row, x in zip(batch, X):
            np.testing.assert_allclose(row, encoder_forward(params, x), atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            encoder_forward(_identity_net(), [1.0, 2.0, 3.0])

    def test_degenerate_embedding(self):
        params = EncoderParams([np.zeros((2, 2))], [np.zeros(2)], "relu", True)
        with pytest.raises(DegenerateEmbedding):
            encoder_forward(params, [1.0, 1.0])

    def test_deterministic(self):
        params = init_encoder((3, 4, 2), seed=5)
        x = np.array([0.3, -1.2, 2.0])
        assert encoder_forward(params, x).tobytes() == encoder_forward(params, x).tobytes()

    def test_incompatible_layers_rejected(self):
        with pytest.raises(DimensionMismatch):
            EncoderParams([np.ones((3, 2)), np.ones((2, 4))], [np.zeros(3), np.zeros(2)])

    def test_unknown_activation(self):
        with pytest.raises(ValidationError):
            EncoderParams([np.eye(2)], [np.zeros(2)], "gelu")


@given(
    x=st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3),
    seed=st.integers(0, 2**16),
)
@settings(max_examples=60, deadline=None)
def test_normalized_output_is_unit_norm(x, seed):
    params = init_encoder((3, 5, 4), "tanh", True, seed=seed)
    params.biases[-1] = np.full(4, 0.1)
    z = encoder_forward(params, x)
    assert abs(np.linalg.norm(z) - 1.0) <= 1e-12


class TestEncoderBackward:
    def test_identity_input_gradient(self):
        _, gx = encoder_backward(_identity_net(), [1.0, 2.0], [1.0, 0.0])
        np.testing.assert_array_equal(gx, [1.0, 0.0])

    def test_zero_upstream_gives_zero_grads(self):
        params = init_encoder((3, 4, 2), seed=0)
        grads, gx = encoder_backward(params, [0.5, -0.2, 1.0], [0.0, 0.0])
        assert np.all(grads.flat() == 0)
        assert np.all(gx == 0)

    def test_upstream_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            encoder_backward(_identity_net(), [1.0, 2.0], [1.0, 0.0, 0.0])

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    @pytest.mark.parametrize("normalize", [False, True])
    def test_matches_finite_differences(self, activation, normalize):
        rng = np.random.default_rng(11)
        for _ in range(20):
            params = init_encoder((4, 6, 3), activation, normalize, seed=rng)
            params.biases = [rng.normal(scale=0.5, size=b.shape) for b in params.biases]
            X = rng.normal(size=(3, 4))
            up = rng.normal(size=(3, 3))
            grads, gx = encoder_backward(params, X, up)

            def f(theta):
                return float(np.sum(up * encoder_forward(params.with_flat(theta), X)))

            report = finite_difference_check(f, params.flat(), grads.flat(), step=1e-5)
            assert report.max_relative_error <= 1e-5
            rep_x = finite_difference_check(lambda xx: float(np.sum(up * encoder_forward(params, xx))), X, gx, 1e-5)
            assert rep_x.max_relative_error <= 1e-5


class TestSgdStep:
    def _scalar(self, p):
        return EncoderParams([np.array([[p]])], [np.array([0.0])], "relu", False)

    def test_basic_step(self):
        out = sgd_step(self._scalar(1.0), self._scalar(2.0), 0.5)
        assert out.weights[0][0, 0] == 0.0

    def test_default_learning_rate(self):
        out = sgd_step(self._scalar(1.0), self._scalar(1.0), 0.001)
        assert out.weights[0][0, 0] == pytest.approx(0.999, abs=1e-15)

    def test_zero_gradient_is_identity(self):
        params = init_encoder((3, 4, 2), seed=0)
        zero = params.with_flat(np.zeros(params.size))
        assert sgd_step(params, zero, 0.1) == params

    def test_zero_learning_rate_is_identity(self):
        params = init_encoder((3, 4, 2), seed=0)
        grads = params.with_flat(np.ones(params.size))
        assert sgd_step(params, grads, 0.0) == params

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            sgd_step(init_encoder((3, 4, 2)), init_encoder((3, 5, 2)), 0.1)


class TestFiniteDifference:
    def test_quadratic(self):
        g = numeric_gradient(lambda w: float(w[0] ** 2), np.array([3.0]), 1e-5)
        assert g[0] == pytest.approx(6.0, abs=1e-8)

    def test_constant_loss(self):
        step = 1e-4
        report = finite_difference_check(lambda w: 4.2, np.array([1.0, -2.0, 0.5]), np.zeros(3), step)
        assert np.all(np.abs(report.numeric) <= step**2)

    def test_relative_error_formula(self):
        assert relative_error(1.0, 1.0) == 0.0
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1.0, 3.0) == pytest.approx(0.5)

    def test_non_finite_loss(self):
        with pytest.raises(NonFiniteLoss):
            numeric_gradient(lambda w: math.inf if w[0] > 0 else 0.0, np.array([0.0]), 1e-5)

    def test_step_range(self):
        with pytest.raises(ValidationError):
            numeric_gradient(lambda w: 0.0, np.zeros(1), 0.1)


def test_flat_roundtrip():
    params = init_encoder((3, 4, 2), seed=3)
    assert params.with_flat(params.flat()) == params
    assert params.flat().size == params.size == 3 * 4 + 4 + 4 * 2 + 2


def test_glorot_bounds():
    params = init_encoder((10, 20, 5), seed=0)
    for w in params.weights:
        s = math.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.all(np.abs(w) <= s)
    assert all(np.all(b == 0) for b in params.biases)
