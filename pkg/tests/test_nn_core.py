import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evcap import nn_core as nn
from evcap.errors import InvalidArgument, InvalidState
from evcap.gradcheck import numerical_gradient, relative_error


def scalar_gru(x, h, wz=1.0, wr=1.0, wh=1.0, uz=1.0, ur=1.0, uh=1.0):
    """Plain-float GRU step used as an independent reference."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    z = sig(x * wz + h * uz)
    r = sig(x * wr + h * ur)
    hh = math.tanh(x * wh + r * h * uh)
    return (1 - z) * h + z * hh


def ones_cell(dim=1):
    p = nn.GruCellParams.zeros(dim, dim)
    for name in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h"):
        getattr(p, name)[:] = 1.0
    return p


class TestGruCell:
    def test_zero_params_halve_state(self):
        p = nn.GruCellParams.zeros(3, 4)
        h_prev = np.array([0.2, -0.4, 0.6, 1.0])
        h, _ = nn.gru_cell_forward(p, np.ones(3), h_prev)
        np.testing.assert_array_equal(h, 0.5 * h_prev)

    def test_zero_params_zero_state_fixed_point(self):
        p = nn.GruCellParams.zeros(3, 4)
        h, _ = nn.gru_cell_forward(p, np.ones(3), np.zeros(4))
        np.testing.assert_array_equal(h, np.zeros(4))

    def test_scalar_case_matches_reference(self):
        h, _ = nn.gru_cell_forward(ones_cell(), np.array([1.0]), np.array([1.0]))
        sig2 = 1 / (1 + math.exp(-2))
        expected = (1 - sig2) * 1 + sig2 * math.tanh(1 + sig2)
        assert h[0] == pytest.approx(expected, abs=1e-15)
        assert h[0] == pytest.approx(scalar_gru(1.0, 1.0), abs=1e-15)

    def test_scalar_grad_wrt_x_matches_central_difference(self):
        _, cache = nn.gru_cell_forward(ones_cell(), np.array([1.0]), np.array([1.0]))
        _, gx, _ = nn.gru_cell_backward(cache, np.array([1.0]))
        fd = (scalar_gru(1 + 1e-5, 1.0) - scalar_gru(1 - 1e-5, 1.0)) / 2e-5
        assert abs(gx[0] - fd) / abs(fd) < 1e-6

    def test_zero_upstream_gradient(self):
        rng = nn.seeded_rng(0)
        p = nn.GruCellParams.init(3, 5, rng)
        _, cache = nn.gru_cell_forward(p, rng.normal(size=3), rng.normal(size=5) * 0.5)
        gp, gx, gh = nn.gru_cell_backward(cache, np.zeros(5))
        assert not np.any(gx) and not np.any(gh)
        assert all(not np.any(a) for a in gp.arrays().values())

    def test_random_4x8_every_parameter(self):
        rng = nn.seeded_rng(11)
        p = nn.GruCellParams.init(4, 8, rng)
        x, h = rng.normal(size=4), rng.uniform(-0.9, 0.9, size=8)
        w = rng.normal(size=8)
        f = lambda: float(w @ nn.gru_cell_forward(p, x, h)[0])
        gp, _, _ = nn.gru_cell_backward(nn.gru_cell_forward(p, x, h)[1], w)
        for name in p.NAMES:
            assert relative_error(getattr(gp, name), numerical_gradient(f, getattr(p, name))) < 1e-4, name

    def test_dimension_mismatch(self):
        p = nn.GruCellParams.zeros(3, 4)
        with pytest.raises(InvalidArgument):
            nn.gru_cell_forward(p, np.ones(2), np.zeros(4))
        with pytest.raises(InvalidArgument):
            nn.gru_cell_forward(p, np.ones(3), np.zeros(5))

    def test_mismatched_cache_is_invalid_state(self):
        p = nn.GruCellParams.zeros(3, 4)
        _, cache = nn.gru_cell_forward(p, np.ones(3), np.zeros(4))
        with pytest.raises(InvalidState):
            nn.gru_cell_backward(cache, np.zeros(6))
        with pytest.raises(InvalidState):
            nn.gru_cell_backward(("not", "a", "cache"), np.zeros(4))

    def test_parameter_count_matches_stored_floats(self):
        for i, h in [(1, 1), (4, 8), (2648, 32), (256, 128)]:
            p = nn.GruCellParams.zeros(i, h)
            assert p.n_params == sum(a.size for a in p.arrays().values())

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_state_stays_bounded(self, seed):
        # |h| < 1 in exact arithmetic; tanh saturates to 1.0 in float64
        rng = nn.seeded_rng(seed)
        p = nn.GruCellParams.init(3, 6, rng)
        for a in p.arrays().values():
            a *= 4.0
        h = rng.uniform(-0.999, 0.999, size=6)
        for _ in range(10):
            h, _ = nn.gru_cell_forward(p, rng.normal(size=3) * 5, h)
            assert np.all(np.abs(h) <= 1.0)


class TestGruLayer:
    def test_single_step_equals_cell(self):
        rng = nn.seeded_rng(1)
        p = nn.GruCellParams.init(3, 4, rng)
        x = rng.normal(size=(1, 3))
        out, _ = nn.gru_layer_forward(p, x)
        h, _ = nn.gru_cell_forward(p, x[0], np.zeros(4))
        np.testing.assert_array_equal(out[0], h)

    def test_zero_params_geometric_decay(self):
        p = nn.GruCellParams.zeros(2, 3)
        h0 = np.array([0.8, -0.4, 0.2])
        out, _ = nn.gru_layer_forward(p, np.ones((5, 2)), h0)
        for t in range(5):
            np.testing.assert_allclose(out[t], 0.5 ** (t + 1) * h0, rtol=0, atol=1e-15)

    def test_matches_manual_unrolling(self):
        rng = nn.seeded_rng(2)
        p = nn.GruCellParams.init(3, 4, rng)
        seq = rng.normal(size=(3, 3))
        out, _ = nn.gru_layer_forward(p, seq)
        h = np.zeros(4)
        for t in range(3):
            h, _ = nn.gru_cell_forward(p, seq[t], h)
            np.testing.assert_array_equal(out[t], h)

    def test_empty_sequence_rejected(self):
        with pytest.raises(InvalidArgument):
            nn.gru_layer_forward(nn.GruCellParams.zeros(2, 2), np.zeros((0, 2)))

    def test_mask_carries_state(self):
        rng = nn.seeded_rng(3)
        p = nn.GruCellParams.init(2, 3, rng)
        seq = rng.normal(size=(4, 2, 2))
        mask = np.array([[1, 1], [1, 1], [1, 0], [1, 0]], dtype=float)
        out, _ = nn.gru_layer_forward(p, seq, mask=mask)
        short, _ = nn.gru_layer_forward(p, seq[:2, 1])
        np.testing.assert_array_equal(out[-1, 1], short[-1])


class TestBiGru:
    def test_palindrome_symmetry(self):
        rng = nn.seeded_rng(4)
        p = nn.GruCellParams.init(3, 4, rng)
        half = rng.normal(size=(2, 3))
        seq = np.concatenate([half, half[::-1]])
        out, _ = nn.bigru_layer_forward(p, p, seq)
        T = len(seq)
        for t in range(T):
            np.testing.assert_allclose(out[t, :4], out[T - 1 - t, 4:], atol=1e-15)

    def test_single_frame(self):
        rng = nn.seeded_rng(5)
        f, b = nn.GruCellParams.init(3, 2, rng), nn.GruCellParams.init(3, 2, rng)
        x = rng.normal(size=(1, 3))
        out, _ = nn.bigru_layer_forward(f, b, x)
        hf, _ = nn.gru_cell_forward(f, x[0], np.zeros(2))
        hb, _ = nn.gru_cell_forward(b, x[0], np.zeros(2))
        np.testing.assert_array_equal(out[0], np.concatenate([hf, hb]))

    def test_backward_half_is_reversed_layer(self):
        rng = nn.seeded_rng(6)
        f, b = nn.GruCellParams.init(3, 4, rng), nn.GruCellParams.init(3, 4, rng)
        seq = rng.normal(size=(4, 3))
        out, _ = nn.bigru_layer_forward(f, b, seq)
        fwd, _ = nn.gru_layer_forward(f, seq)
        bwd, _ = nn.gru_layer_forward(b, seq[::-1])
        np.testing.assert_array_equal(out[:, :4], fwd)
        np.testing.assert_array_equal(out[:, 4:], bwd[::-1])

    def test_dim_mismatch(self):
        with pytest.raises(InvalidArgument):
            nn.bigru_layer_forward(nn.GruCellParams.zeros(3, 4), nn.GruCellParams.zeros(3, 5), np.ones((2, 3)))


class TestDenseSoftmax:
    def test_identity_linear(self):
        p = nn.DenseParams(np.eye(3), np.zeros(3))
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(nn.dense_forward(p, x)[0], x)

    def test_leaky_relu_slope(self):
        assert nn.leaky_relu(-1.0) == pytest.approx(-0.3)
        assert nn.leaky_relu(2.0) == 2.0

    def test_dense_gradients(self):
        from evcap.gradcheck import check_dense

        assert check_dense(0) < 1e-4

    def test_dense_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            nn.dense_forward(nn.DenseParams(np.eye(3), np.zeros(3)), np.ones(4))

    def test_softmax_uniform(self):
        np.testing.assert_allclose(nn.softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-16)

    def test_cross_entropy_value(self):
        probs = nn.softmax([1.0, 2.0, 3.0])
        expected = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
        assert nn.cross_entropy(probs, 2) == pytest.approx(expected, abs=1e-14)
        assert expected == pytest.approx(0.40761, abs=1e-5)

    def test_cross_entropy_target_range(self):
        with pytest.raises(InvalidArgument):
            nn.cross_entropy(nn.softmax([0.0, 1.0]), 2)

    @settings(max_examples=100, deadline=None)
    @given(v=arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)),
           c=st.floats(-100, 100))
    def test_softmax_sum_and_shift_invariance(self, v, c):
        p = nn.softmax(v)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p > 0) and np.all(p <= 1)
        q = nn.softmax(v + c)
        assert np.argmax(p) == np.argmax(q)
        assert np.max(np.abs(p - q)) < 1e-12


class TestBatchNorm:
    def test_train_mode_standardises(self):
        rng = nn.seeded_rng(7)
        p = nn.BatchNormParams.init(4)
        y, _ = nn.batchnorm_forward(p, rng.normal(3, 2, size=(16, 4)), "train")
        np.testing.assert_allclose(y.mean(0), 0, atol=1e-9)
        np.testing.assert_allclose(y.var(0), 1, atol=1e-4)

    def test_train_mode_unit_variance_tight(self):
        # variance 1 ± 1e-6 needs var ≫ eps·1e6; scale the data accordingly.
        rng = nn.seeded_rng(8)
        p = nn.BatchNormParams.init(3)
        y, _ = nn.batchnorm_forward(p, rng.normal(0, 100, size=(8, 3)), "train")
        np.testing.assert_allclose(y.var(0), 1, atol=1e-6)

    def test_constant_column_maps_to_zero(self):
        p = nn.BatchNormParams.init(2)
        x = np.column_stack([np.full(8, 5.0), np.arange(8.0)])
        y, _ = nn.batchnorm_forward(p, x, "train")
        np.testing.assert_array_equal(y[:, 0], 0.0)

    def test_running_stats_and_infer(self):
        p = nn.BatchNormParams.init(2, momentum=0.5)
        x = np.array([[0.0, 2.0], [2.0, 6.0]])
        nn.batchnorm_forward(p, x, "train")
        np.testing.assert_allclose(p.running_mean, [0.5, 2.0])
        np.testing.assert_allclose(p.running_var, [1.0, 2.5])
        y, _ = nn.batchnorm_forward(p, np.array([[0.5, 2.0]]), "infer")
        np.testing.assert_allclose(y, 0.0, atol=1e-12)

    def test_train_needs_two_rows(self):
        with pytest.raises(InvalidArgument):
            nn.batchnorm_forward(nn.BatchNormParams.init(2), np.ones((1, 2)), "train")

    def test_gradients(self):
        from evcap.gradcheck import check_batchnorm

        assert check_batchnorm(3) < 1e-4


class TestDropout:
    def test_infer_identity(self):
        x = np.arange(6.0)
        np.testing.assert_array_equal(nn.dropout(x, 0.5, "infer")[0], x)

    def test_rate_zero_identity(self):
        x = np.arange(6.0)
        np.testing.assert_array_equal(nn.dropout(x, 0.0, "train", nn.seeded_rng(0))[0], x)

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_bad_rate(self, rate):
        with pytest.raises(InvalidArgument):
            nn.dropout(np.ones(3), rate, "train", nn.seeded_rng(0))

    def test_statistics(self):
        x = np.full(1_000_000, 2.0)
        y, _ = nn.dropout(x, 0.5, "train", nn.seeded_rng(123))
        assert abs(np.mean(y != 0) - 0.5) < 0.005
        assert abs(y.mean() - 2.0) / 2.0 < 0.01

    def test_deterministic_masks(self):
        x = np.ones(100)
        a = nn.dropout(x, 0.5, "train", nn.seeded_rng(9))[1]
        b = nn.dropout(x, 0.5, "train", nn.seeded_rng(9))[1]
        np.testing.assert_array_equal(a, b)


class TestAdam:
    def test_zero_gradient_no_change(self):
        params = {"w": np.array([1.0, -2.0])}
        nn.adam_step(params, {"w": np.zeros(2)}, nn.AdamState())
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_first_step_scalar(self):
        params = {"w": np.array([0.0])}
        state = nn.AdamState()
        nn.adam_step(params, {"w": np.array([1.0])}, state)
        # m̂ = v̂ = 1 at t = 1, so the step is lr / (1 + ε)
        assert params["w"][0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-18)
        assert state.t == 1

    def test_converges_on_quadratic(self):
        params = {"w": np.array([0.0])}
        state = nn.AdamState(lr=0.01)
        for step in range(2000):
            nn.adam_step(params, {"w": 2 * (params["w"] - 3.0)}, state)
        assert abs(params["w"][0] - 3.0) < 1e-2
        assert state.t == 2000

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            nn.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nn.AdamState())


def test_seeded_rng_is_reproducible():
    a = nn.seeded_rng(2024).random(5)
    b = nn.seeded_rng(2024).random(5)
    np.testing.assert_array_equal(a, b)
    # PCG64 streams are fixed by numpy's documented algorithm
    assert nn.seeded_rng(0).integers(0, 2**31, size=3).tolist() == \
        np.random.Generator(np.random.PCG64(0)).integers(0, 2**31, size=3).tolist()
