import numpy as np
import pytest

from cdrgen import autodiff as ad
from cdrgen.autodiff.gradcheck import (
    check_gradients,
    finite_difference_gradients,
    max_relative_error,
)


def make_params(rng, **shapes):
    return {k: ad.parameter(rng.normal(size=s)) for k, s in shapes.items()}


class TestElementwiseGradients:
    def test_arithmetic_chain(self):
        rng = np.random.default_rng(0)
        params = make_params(rng, a=(4, 3), b=(4, 3), c=(3,))

        def fn(p):
            x = (p["a"] + p["b"]) * p["c"] - p["a"] / (p["b"] * p["b"] + 2.5)
            return (x * x).sum()

        check_gradients(fn, params)

    def test_nonlinearities(self):
        rng = np.random.default_rng(1)
        params = make_params(rng, a=(5, 2))

        def fn(p):
            x = ad.silu(p["a"]) + ad.tanh(p["a"]) + ad.sigmoid(p["a"])
            x = x + ad.softplus(p["a"]) + ad.exp(0.3 * p["a"])
            x = x + ad.sqrt(p["a"] * p["a"] + 1.0) + ad.log(p["a"] * p["a"] + 0.5)
            return x.sum()

        check_gradients(fn, params)

    def test_pow_and_neg(self):
        rng = np.random.default_rng(2)
        params = make_params(rng, a=(6,))

        def fn(p):
            return ((p["a"] * p["a"] + 1.0) ** 1.5 - (-p["a"])).sum()

        check_gradients(fn, params)

    def test_broadcasting(self):
        rng = np.random.default_rng(3)
        params = make_params(rng, a=(4, 1, 3), b=(5, 3), c=())

        def fn(p):
            return ((p["a"] * p["b"] + p["c"]) ** 2.0).mean()

        check_gradients(fn, params)


class TestMatmulGradients:
    def test_2d(self):
        rng = np.random.default_rng(4)
        params = make_params(rng, a=(4, 3), w=(3, 5))

        def fn(p):
            return ad.tanh(p["a"] @ p["w"]).sum()

        check_gradients(fn, params)

    def test_batched_times_2d(self):
        rng = np.random.default_rng(5)
        params = make_params(rng, v=(4, 3, 6), w=(6, 2))

        def fn(p):
            return ((p["v"] @ p["w"]) ** 2.0).sum()

        check_gradients(fn, params)

    def test_constant_rotation_times_param(self):
        rng = np.random.default_rng(6)
        rots = rng.normal(size=(4, 3, 3))
        params = make_params(rng, v=(4, 3, 2))

        def fn(p):
            return (ad.matmul(ad.constant(rots), p["v"]) ** 2.0).sum()

        check_gradients(fn, params)

    def test_vector_matrix(self):
        rng = np.random.default_rng(7)
        params = make_params(rng, a=(3,), w=(3, 4))

        def fn(p):
            return ad.silu(p["a"] @ p["w"]).sum()

        check_gradients(fn, params)


class TestShapeOps:
    def test_reshape_transpose_concat_slice(self):
        rng = np.random.default_rng(8)
        params = make_params(rng, a=(4, 6), b=(4, 2))

        def fn(p):
            x = p["a"].reshape(4, 3, 2).transpose((1, 0, 2)).reshape(3, 8)
            y = ad.concat([p["b"], p["b"] * 2.0], axis=1)
            return (x[:, :4] ** 2.0).sum() + (y[1:3, :] ** 2.0).sum()

        check_gradients(fn, params)

    def test_reductions(self):
        rng = np.random.default_rng(9)
        params = make_params(rng, a=(3, 4, 2))

        def fn(p):
            x = p["a"].sum(axis=1) * p["a"].mean(axis=(0, 2), keepdims=False).sum()
            return x.mean() + p["a"].sum()

        check_gradients(fn, params)


class TestIndexingOps:
    def test_gather_rows_repeated_indices(self):
        rng = np.random.default_rng(10)
        params = make_params(rng, table=(5, 3))
        idx = np.array([0, 2, 2, 4, 0])

        def fn(p):
            return (ad.gather_rows(p["table"], idx) ** 2.0).sum()

        check_gradients(fn, params)

    def test_segment_sum(self):
        rng = np.random.default_rng(11)
        params = make_params(rng, x=(7, 3))
        seg = np.array([0, 0, 1, 2, 2, 2, 0])

        def fn(p):
            return ad.tanh(ad.segment_sum(p["x"], seg, 3)).sum()

        check_gradients(fn, params)

    def test_segment_sum_empty_segment(self):
        x = ad.parameter(np.ones((2, 2)))
        out = ad.segment_sum(x, np.array([0, 2]), 4)
        assert out.shape == (4, 2)
        np.testing.assert_array_equal(out.data[1], 0.0)
        np.testing.assert_array_equal(out.data[3], 0.0)

    def test_segment_sum_bad_ids(self):
        x = ad.parameter(np.ones((2, 2)))
        with pytest.raises(ValueError):
            ad.segment_sum(x, np.array([0, 5]), 3)


class TestSoftmaxFamily:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(12)
        x = ad.constant(rng.normal(size=(6, 9)) * 30.0)
        s = ad.softmax(x, axis=-1)
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_gradients(self):
        rng = np.random.default_rng(13)
        params = make_params(rng, a=(4, 5))
        w = rng.normal(size=(4, 5))

        def fn(p):
            return (ad.softmax(p["a"], axis=-1) * w).sum()

        check_gradients(fn, params)

    def test_log_softmax_gradients(self):
        rng = np.random.default_rng(14)
        params = make_params(rng, a=(3, 6))
        w = rng.normal(size=(3, 6))

        def fn(p):
            return (ad.log_softmax(p["a"], axis=-1) * w).sum()

        check_gradients(fn, params)

    def test_segment_softmax(self):
        rng = np.random.default_rng(15)
        params = make_params(rng, a=(8, 2))
        seg = np.array([0, 0, 0, 1, 1, 2, 2, 2])
        w = rng.normal(size=(8, 2))

        def fn(p):
            return (ad.segment_softmax(p["a"], seg, 3) * w).sum()

        check_gradients(fn, params)
        att = ad.segment_softmax(ad.constant(rng.normal(size=(8, 2)) * 50.0), seg, 3)
        sums = np.zeros((3, 2))
        np.add.at(sums, seg, att.data)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_single_element_segment_is_one(self):
        att = ad.segment_softmax(ad.constant(np.array([[4.2]])), np.array([0]), 1)
        np.testing.assert_allclose(att.data, 1.0)


class TestVectorHelpers:
    def test_cross3_matches_numpy(self):
        rng = np.random.default_rng(16)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        out = ad.cross3(ad.constant(a), ad.constant(b))
        np.testing.assert_allclose(out.data, np.cross(a, b), atol=1e-14)

    def test_cross3_gradients(self):
        rng = np.random.default_rng(17)
        params = make_params(rng, a=(4, 3), b=(4, 3))
        w = rng.normal(size=(4, 3))

        def fn(p):
            return (ad.cross3(p["a"], p["b"]) * w).sum()

        check_gradients(fn, params)

    def test_normalize_rows(self):
        rng = np.random.default_rng(18)
        params = make_params(rng, a=(5, 3))

        def fn(p):
            return (ad.normalize_rows(p["a"]) * np.arange(3.0)).sum()

        check_gradients(fn, params)
        out = ad.normalize_rows(ad.constant(rng.normal(size=(4, 3))))
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), 1.0, atol=1e-9)


class TestGraphMechanics:
    def test_backward_requires_scalar(self):
        x = ad.parameter(np.ones(3))
        with pytest.raises(ValueError):
            (x * 2.0).backward()

    def test_no_grad_blocks_recording(self):
        x = ad.parameter(np.ones(3))
        with ad.no_grad():
            y = (x * 3.0).sum()
        assert not y.requires_grad
        assert y._parents == ()

    def test_grad_accumulates_over_reuse(self):
        x = ad.parameter(np.array(2.0))
        y = x * x + x * 3.0
        y.backward()
        np.testing.assert_allclose(x.grad, 7.0)

    def test_untouched_parameter_gets_zero_gradient(self):
        params = {
            "used": ad.parameter(np.ones(2)),
            "unused": ad.parameter(np.ones((2, 2))),
        }
        value, grads = ad.evaluate_with_gradients(lambda p: (p["used"] ** 2.0).sum(), params)
        np.testing.assert_allclose(value, 2.0)
        assert grads["unused"].shape == (2, 2)
        assert np.all(grads["unused"] == 0.0)

    def test_constants_collect_no_gradient(self):
        c = ad.constant(np.ones(3))
        x = ad.parameter(np.ones(3))
        ((x * c).sum()).backward()
        assert c.grad is None

    def test_nan_in_forward_raises(self):
        x = ad.parameter(np.array([-1.0]))
        with pytest.raises(ad.GradcheckError):
            ad.log(x)

    def test_division_by_zero_raises(self):
        x = ad.parameter(np.array([1.0]))
        with pytest.raises(ad.GradcheckError):
            x / ad.constant(np.array([0.0]))

    def test_evaluate_with_gradients_rejects_nonscalar(self):
        params = {"a": ad.parameter(np.ones(2))}
        with pytest.raises(ValueError):
            ad.evaluate_with_gradients(lambda p: p["a"] * 1.0, params)

    def test_identical_reruns_are_bitwise_equal(self):
        rng = np.random.default_rng(19)
        data = rng.normal(size=(6, 4))

        def run():
            p = {"w": ad.parameter(data.copy())}
            v, g = ad.evaluate_with_gradients(
                lambda q: ad.silu(q["w"] @ q["w"].transpose((1, 0))).sum(), p
            )
            return v, g["w"]

        v1, g1 = run()
        v2, g2 = run()
        assert v1 == v2
        np.testing.assert_array_equal(g1, g2)


class TestFiniteDifferenceOracle:
    def test_fd_matches_analytic_on_known_function(self):
        # d/dx of x^3 at 2 is 12; the oracle itself is checked against algebra
        params = {"x": ad.parameter(np.array(2.0))}
        fd = finite_difference_gradients(lambda p: p["x"] ** 3.0, params)
        np.testing.assert_allclose(fd["x"], 12.0, rtol=1e-8)

    def test_max_relative_error_reports_worst(self):
        worst, name = max_relative_error(
            {"a": np.array([1.0, 2.0]), "b": np.array([5.0])},
            {"a": np.array([1.0, 2.0]), "b": np.array([5.5])},
        )
        assert name == "b"
        assert worst == pytest.approx(0.5 / 5.5)


class TestAdam:
    def test_first_step_matches_hand_formula(self):
        cfg = ad.OptimizerConfig(learning_rate=0.1)
        p = {"w": ad.parameter(np.array([1.0, -2.0]))}
        g = {"w": np.array([0.5, -0.25])}
        state = ad.optimizer_step(p, g, ad.OptimizerState(), cfg)
        # at t=1 the bias corrections cancel: update = lr * g / (|g| + eps)
        expected = np.array([1.0, -2.0]) - 0.1 * g["w"] / (np.abs(g["w"]) + cfg.eps)
        np.testing.assert_allclose(p["w"].data, expected, rtol=1e-12)
        assert state.step == 1

    def test_zero_gradient_leaves_parameters_bit_identical(self):
        cfg = ad.OptimizerConfig()
        p = {"w": ad.parameter(np.array([1.5, 2.5]))}
        before = p["w"].data.copy()
        state = ad.OptimizerState()
        for _ in range(3):
            state = ad.optimizer_step(p, {"w": np.zeros(2)}, state, cfg)
        np.testing.assert_array_equal(p["w"].data, before)

    def test_weight_decay_shrinks_without_gradient(self):
        cfg = ad.OptimizerConfig(learning_rate=0.1, weight_decay=0.5)
        p = {"w": ad.parameter(np.array([2.0]))}
        ad.optimizer_step(p, {"w": np.zeros(1)}, ad.OptimizerState(), cfg)
        np.testing.assert_allclose(p["w"].data, 2.0 * (1.0 - 0.1 * 0.5))

    def test_descends_quadratic(self):
        target = np.array([3.0, -1.0, 0.5])
        p = {"w": ad.parameter(np.zeros(3))}
        state = ad.OptimizerState()
        cfg = ad.OptimizerConfig(learning_rate=0.05)
        for _ in range(400):
            _, grads = ad.evaluate_with_gradients(
                lambda q: ((q["w"] - target) ** 2.0).sum(), p
            )
            state = ad.optimizer_step(p, grads, state, cfg)
        np.testing.assert_allclose(p["w"].data, target, atol=1e-3)

    def test_same_seed_same_trajectory(self):
        def run():
            rng = np.random.default_rng(77)
            p = {"w": ad.parameter(rng.normal(size=4))}
            state = ad.OptimizerState()
            cfg = ad.OptimizerConfig()
            for _ in range(5):
                _, grads = ad.evaluate_with_gradients(
                    lambda q: (ad.tanh(q["w"]) ** 2.0).sum(), p
                )
                state = ad.optimizer_step(p, grads, state, cfg)
            return p["w"].data

        np.testing.assert_array_equal(run(), run())

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            ad.optimizer_step({}, {}, ad.OptimizerState(), ad.OptimizerConfig(beta1=1.0))
        with pytest.raises(ValueError):
            ad.optimizer_step({}, {}, ad.OptimizerState(), ad.OptimizerConfig(learning_rate=0.0))

    def test_rejects_shape_mismatch(self):
        p = {"w": ad.parameter(np.zeros(3))}
        with pytest.raises(ValueError):
            ad.optimizer_step(p, {"w": np.zeros(2)}, ad.OptimizerState(), ad.OptimizerConfig())


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(20)
        arrays = {
            "layers.0.weight": rng.normal(size=(7, 3)),
            "layers.0.bias": rng.normal(size=(3,)),
            "scalar": np.array(3.14159),
        }
        meta = {"step": 12, "note": "hello"}
        path = tmp_path / "model.ckpt"
        ad.save_checkpoint(path, arrays, meta)
        loaded, loaded_meta = ad.load_checkpoint(path)
        assert loaded_meta == meta
        assert set(loaded) == set(arrays)
        for k in arrays:
            np.testing.assert_array_equal(loaded[k], arrays[k])
            assert loaded[k].shape == arrays[k].shape

    def test_save_is_deterministic_bytes(self, tmp_path):
        arrays = {"b": np.arange(4.0), "a": np.eye(2)}
        p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
        ad.save_checkpoint(p1, arrays, {"k": 1})
        ad.save_checkpoint(p2, arrays, {"k": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ad.CheckpointError):
            ad.load_checkpoint(path)

    def test_rejects_wrong_version(self, tmp_path):
        path = tmp_path / "model.ckpt"
        ad.save_checkpoint(path, {"a": np.zeros(2)}, {})
        raw = bytearray(path.read_bytes())
        # bump the version digit inside the JSON header
        idx = raw.find(b'"format_version":1')
        raw[idx + len(b'"format_version":')] = ord("9")
        path.write_bytes(bytes(raw))
        with pytest.raises(ad.CheckpointError):
            ad.load_checkpoint(path)

    def test_rejects_truncated_payload(self, tmp_path):
        path = tmp_path / "model.ckpt"
        ad.save_checkpoint(path, {"a": np.zeros(8)}, {})
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(ad.CheckpointError):
            ad.load_checkpoint(path)
