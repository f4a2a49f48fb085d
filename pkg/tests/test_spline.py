import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kancim.checkpoint import load_model, save_model
from kancim.data import Dataset, synthetic
from kancim.errors import DomainError, ShapeError, TrainingDivergedError
from kancim.spline import (BSplineSpec, KanLayer, KanModel, basis_eval, basis_matrix,
                           basis_matrix_and_deriv, evaluate_loss, grid_extend, layer_forward,
                           loss_and_grads)
from kancim.train import TrainConfig, train

from oracles import cox_de_boor, naive_layer


class TestBasis:
    def test_vector_length_k3_g5(self):
        assert basis_eval(0.42, BSplineSpec(3, 5)).shape == (8,)

    def test_linear_hat_midpoint(self):
        np.testing.assert_array_equal(basis_eval(0.5, BSplineSpec(1, 1)), [0.5, 0.5])

    def test_matches_recursive_oracle_at_037(self):
        got = basis_eval(0.37, BSplineSpec(3, 5))
        np.testing.assert_allclose(got, cox_de_boor(0.37, 3, 5), atol=1e-12, rtol=0)

    @pytest.mark.parametrize("K,G", [(1, 2), (2, 7), (3, 5), (4, 16), (3, 64)])
    def test_matches_oracle_including_edges(self, K, G):
        spec = BSplineSpec(K, G, -1.0, 2.0)
        xs = np.concatenate([[-1.0, 2.0], np.linspace(-1, 2, 37)])
        for x in xs:
            np.testing.assert_allclose(basis_eval(x, spec), cox_de_boor(x, K, G, -1.0, 2.0),
                                       atol=1e-12, rtol=0)

    def test_knot_spacing_uniform(self):
        spec = BSplineSpec(3, 7, -0.5, 1.5)
        k = spec.knots
        assert len(k) == 7 + 2 * 3 + 1
        assert np.max(np.abs(np.diff(k) - 2.0 / 7)) < 1e-12

    def test_out_of_domain_raises(self):
        with pytest.raises(DomainError):
            basis_eval(1.01, BSplineSpec(3, 5))
        with pytest.raises(DomainError):
            basis_eval(float("nan"), BSplineSpec(3, 5))

    def test_clamped_matrix_uses_edge(self):
        spec = BSplineSpec(2, 4)
        np.testing.assert_array_equal(basis_matrix(np.array([1.7]), spec, clamp=True),
                                      basis_matrix(np.array([1.0]), spec))

    def test_derivative_matches_central_difference(self):
        spec = BSplineSpec(3, 6, -1, 1)
        x = np.array([-0.77, -0.1, 0.05, 0.49, 0.93])
        _, dB = basis_matrix_and_deriv(x, spec)
        h = 1e-6
        fd = (basis_matrix(x + h, spec) - basis_matrix(x - h, spec)) / (2 * h)
        np.testing.assert_allclose(dB, fd, atol=1e-7)


@settings(max_examples=200, deadline=None)
@given(K=st.integers(1, 4), G=st.integers(1, 64), u=st.floats(0, 1))
def test_partition_nonnegativity_local_support(K, G, u):
    spec = BSplineSpec(K, G, -2.0, 3.0)
    x = -2.0 + 5.0 * u
    b = basis_eval(x, spec)
    assert abs(b.sum() - 1.0) < 1e-12
    assert np.all(b >= 0)
    nz = np.flatnonzero(b)
    assert len(nz) <= K + 1
    assert np.all(np.diff(nz) == 1)


class TestLayer:
    def test_zero_spline_is_relu_passthrough(self):
        spec = BSplineSpec(3, 5, -1, 1)
        layer = KanLayer(spec, np.zeros((2, 2, 8)), np.eye(2))
        np.testing.assert_allclose(layer_forward(layer, np.array([0.3, 0.8])), [0.3, 0.8])

    def test_one_hot_extracts_basis(self):
        spec = BSplineSpec(3, 5)
        c = np.zeros((1, 1, 8))
        c[0, 0, 4] = 1.0
        layer = KanLayer(spec, c, np.zeros((1, 1)))
        for x in (0.0, 0.31, 0.5, 0.99):
            assert layer_forward(layer, np.array([x]))[0] == basis_eval(x, spec)[4]

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(3)
        spec = BSplineSpec(3, 5, -1, 1)
        layer = KanLayer.init(2, 2, spec, rng, scale=1.0)
        for _ in range(20):
            x = rng.uniform(-1, 1, 2)
            ref = naive_layer(layer.coeffs, layer.base_weights, 3, 5, -1, 1, x)
            np.testing.assert_allclose(layer_forward(layer, x), ref, atol=1e-10, rtol=0)

    def test_shape_errors(self):
        spec = BSplineSpec(3, 5)
        with pytest.raises(ShapeError):
            KanLayer(spec, np.zeros((1, 1, 7)), np.zeros((1, 1)))
        layer = KanLayer(spec, np.zeros((1, 2, 8)), np.zeros((1, 2)))
        with pytest.raises(ShapeError):
            layer.forward(np.zeros(3))
        a = KanLayer(spec, np.zeros((3, 2, 8)), np.zeros((3, 2)))
        b = KanLayer(spec, np.zeros((1, 2, 8)), np.zeros((1, 2)))
        with pytest.raises(ShapeError):
            KanModel([a, b])

    def test_nonfinite_coeffs_rejected(self):
        c = np.zeros((1, 1, 8))
        c[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            KanLayer(BSplineSpec(3, 5), c, np.zeros((1, 1)))


class TestTraining:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        model = KanModel.build([3, 4, 2], 3, 5, -1, 1, seed=1, scale=0.5, base_act="silu")
        X = rng.uniform(-0.9, 0.9, (16, 3))
        Y = rng.normal(size=(16, 2))
        _, grads = loss_and_grads(model, X, Y)
        h = 1e-5
        picks = [(l, tuple(rng.integers(0, s) for s in model.layers[l].coeffs.shape))
                 for l in rng.integers(0, 2, 10)]
        for l, idx in picks:
            c = model.layers[l].coeffs
            old = c[idx]
            c[idx] = old + h
            up = evaluate_loss(model, X, Y)
            c[idx] = old - h
            down = evaluate_loss(model, X, Y)
            c[idx] = old
            fd = (up - down) / (2 * h)
            assert abs(grads[l][0][idx] - fd) <= 1e-4 * max(abs(fd), 1e-8)

    def test_base_weight_gradient(self):
        rng = np.random.default_rng(5)
        model = KanModel.build([2, 1], 2, 4, -1, 1, seed=2)
        X = rng.uniform(-1, 1, (10, 2))
        Y = rng.normal(size=(10, 1))
        _, grads = loss_and_grads(model, X, Y)
        w = model.layers[0].base_weights
        h = 1e-5
        w[0, 1] += h
        up = evaluate_loss(model, X, Y)
        w[0, 1] -= 2 * h
        down = evaluate_loss(model, X, Y)
        w[0, 1] += h
        assert grads[0][1][0, 1] == pytest.approx((up - down) / (2 * h), rel=1e-5)

    def test_fits_a_single_basis_function(self):
        spec = BSplineSpec(3, 5, 0, 1)
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 1, (400, 1))
        Y = basis_matrix(X[:, 0], spec)[:, 2:3]
        split = np.where(np.arange(400) < 300, "train", "val")
        ds = Dataset(X, Y, split)
        model = KanModel([KanLayer(spec, np.zeros((1, 1, 8)), np.zeros((1, 1)))])
        _, hist = train(model, ds, TrainConfig(epochs=150, lr=0.5, batch_size=16, train_base=False))
        assert hist.val_loss[-1] < 1e-4

    def test_constant_target_converges_to_noise_variance(self):
        ds = synthetic("constant", 600, 1, seed=4, lo=-1, hi=1, noise=0.05)
        model = KanModel.build([1, 1], 3, 5, -1, 1, seed=0)
        _, hist = train(model, ds, TrainConfig(epochs=60, lr=0.05))
        assert hist.val_loss[-1] < 2 * 0.05**2

    def test_deterministic_and_does_not_touch_input(self):
        ds = synthetic("uniform", 200, 2, seed=1)
        model = KanModel.build([2, 1], 3, 5, -1, 1, seed=0)
        before = model.layers[0].coeffs.copy()
        a, ha = train(model, ds, TrainConfig(epochs=5))
        b, hb = train(model, ds, TrainConfig(epochs=5))
        assert ha.val_loss == hb.val_loss
        np.testing.assert_array_equal(a.layers[0].coeffs, b.layers[0].coeffs)
        np.testing.assert_array_equal(model.layers[0].coeffs, before)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_last_good_model(self):
        ds = synthetic("uniform", 100, 2, seed=1)
        model = KanModel.build([2, 1], 3, 5, -1, 1, seed=0)
        with pytest.raises(TrainingDivergedError) as ei:
            train(model, ds, TrainConfig(epochs=50, lr=1e6, momentum=0.0))
        assert ei.value.checkpoint is not None
        assert all(np.all(np.isfinite(l.coeffs)) for l in ei.value.checkpoint.layers)


class TestGridExtension:
    def test_refinement_is_exact_for_representable_spline(self):
        rng = np.random.default_rng(0)
        layer = KanLayer.init(2, 3, BSplineSpec(3, 5, -1, 1), rng, scale=1.0)
        new = grid_extend(layer, 10)
        xs = np.linspace(-1, 1, 1000)[:, None].repeat(2, axis=1)
        assert np.max(np.abs(layer.forward(xs) - new.forward(xs))) < 1e-8

    def test_same_grid_is_identity(self):
        rng = np.random.default_rng(1)
        layer = KanLayer.init(1, 1, BSplineSpec(2, 6), rng)
        np.testing.assert_allclose(grid_extend(layer, 6).coeffs, layer.coeffs, atol=1e-10)

    def test_shrinking_rejected(self):
        layer = KanLayer.init(1, 1, BSplineSpec(3, 6), np.random.default_rng(0))
        with pytest.raises(ValueError):
            grid_extend(layer, 5)

    def test_partition_of_unity_after_extension(self):
        layer = KanLayer.init(1, 1, BSplineSpec(3, 5), np.random.default_rng(0))
        spec = grid_extend(layer, 13).spec
        B = basis_matrix(np.linspace(0, 1, 101), spec)
        assert np.max(np.abs(B.sum(axis=1) - 1)) < 1e-12


def test_checkpoint_round_trip_is_bit_identical(tmp_path):
    model = KanModel.build([3, 2, 1], 2, 7, -1.5, 0.5, seed=9, base_act="silu")
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for a, b in zip(model.layers, back.layers):
        assert a.spec == b.spec and a.base_act == b.base_act
        np.testing.assert_array_equal(a.coeffs, b.coeffs)
        np.testing.assert_array_equal(a.base_weights, b.base_weights)
