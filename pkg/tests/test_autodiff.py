import numpy as np
import pytest

from batchweight import autodiff as ad
from batchweight.errors import GraphStateError, NumericalError, ShapeError

from helpers import (
    central_difference,
    graph_gradient_check,
    random_mlp_graph,
    relative_error,
)


class TestForward:
    def test_identity_graph(self):
        x = ad.Tensor(np.array([1.0, 2.0, 3.0]), name="x")
        graph = ad.ParameterGraph([("x", x)], lambda inp: inp)
        out = graph.forward(ad.constant([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])

    def test_zero_linear_annihilates(self):
        w = ad.Tensor(np.zeros((3, 2)), name="w")
        graph = ad.ParameterGraph([("w", w)], lambda x: ad.matmul(x, w))
        out = graph.forward(ad.constant(np.random.default_rng(0).normal(size=(5, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((5, 2)))

    def test_two_layer_mlp_matches_matrix_oracle(self):
        rng = np.random.default_rng(7)
        w1 = rng.standard_normal((4, 6))
        b1 = rng.standard_normal(6)
        w2 = rng.standard_normal((6, 3))
        b2 = rng.standard_normal(3)
        x = rng.standard_normal((8, 4))

        t1, tb1 = ad.Tensor(w1), ad.Tensor(b1)
        t2, tb2 = ad.Tensor(w2), ad.Tensor(b2)

        def fn(inp):
            h = ad.tanh(ad.add(ad.matmul(inp, t1), tb1))
            return ad.add(ad.matmul(h, t2), tb2)

        graph = ad.ParameterGraph(
            [("w1", t1), ("b1", tb1), ("w2", t2), ("b2", tb2)], fn
        )
        out = graph.forward(ad.constant(x))
        oracle = np.tanh(x @ w1 + b1) @ w2 + b2
        np.testing.assert_allclose(out.data, oracle, atol=1e-12, rtol=0)

    def test_forward_deterministic_bitwise(self):
        rng = np.random.default_rng(3)
        graph, _ = random_mlp_graph(rng, [5, 8, 4])
        x = ad.constant(rng.standard_normal((6, 5)))
        first = graph.forward(x).data.copy()
        second = graph.forward(x).data
        assert np.array_equal(first, second)

    def test_input_signature_validation_names_offender(self):
        x = ad.Tensor(np.ones(3), name="x")
        graph = ad.ParameterGraph([("x", x)], lambda inp: inp,
                                  input_shapes=[(None, 4)])
        bad = ad.constant(np.ones((2, 3)), name="points")
        with pytest.raises(ShapeError, match="points"):
            graph.forward(bad)

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4, 2))))

    def test_replay_is_bit_exact(self):
        rng = np.random.default_rng(11)
        graph, _ = random_mlp_graph(rng, [4, 7, 1])
        x = ad.constant(rng.standard_normal((5, 4)))
        out = graph.forward(x)
        assert np.array_equal(graph.replay(), out.data)
        assert len(graph.tape) > 0


class TestBackward:
    def test_identity_parameter_gradient(self):
        x = ad.Tensor(np.array(2.0), name="x")
        graph = ad.ParameterGraph([("x", x)], lambda: x)
        graph.forward()
        np.testing.assert_array_equal(graph.backward(np.array(1.0)), [1.0])

    def test_square_gradient(self):
        theta = ad.Tensor(np.array(3.0), name="theta")
        graph = ad.ParameterGraph([("theta", theta)], lambda: ad.square(theta))
        graph.forward()
        np.testing.assert_allclose(graph.backward(np.array(1.0)), [6.0], rtol=1e-15)

    def test_backward_before_forward_raises(self):
        x = ad.Tensor(np.ones(2), name="x")
        graph = ad.ParameterGraph([("x", x)], lambda: x)
        with pytest.raises(GraphStateError):
            graph.backward(np.ones(2))

    def test_three_layer_mlp_finite_differences(self):
        rng = np.random.default_rng(5)
        graph, _ = random_mlp_graph(rng, [4, 8, 8, 2])
        x = ad.constant(rng.standard_normal((6, 4)))
        analytic, numeric = graph_gradient_check(graph, [x])
        assert relative_error(analytic, numeric).max() < 1e-4

    def test_wrt_restriction_matches_full_gradient(self):
        rng = np.random.default_rng(9)
        graph, params = random_mlp_graph(rng, [3, 6, 1])
        x = ad.constant(rng.standard_normal((4, 3)))
        graph.forward(x)
        full = graph.backward(np.ones(()))
        graph.forward(x)
        restricted = graph.backward(np.ones(()), wrt=["w0", "b0"])
        sizes = [t.data.size for _, t in params]
        w0_stop = sizes[0] + sizes[1]
        np.testing.assert_array_equal(restricted[:w0_stop], full[:w0_stop])
        np.testing.assert_array_equal(restricted[w0_stop:], 0.0)


def _primitive_cases(rng):
    """One representative tensor configuration per differentiable primitive."""
    a = rng.standard_normal((4, 3)) + 0.05
    b = rng.standard_normal((4, 3)) + 0.05
    return {
        "matmul": ([rng.standard_normal((4, 3)), rng.standard_normal((3, 5))], {}),
        "add": ([a, rng.standard_normal(3)], {}),
        "sub": ([a, b], {}),
        "mul": ([a, b], {}),
        "div": ([a, b + 3.0 * np.sign(b)], {}),
        "scale": ([a], {"factor": -1.7}),
        "relu": ([a], {}),
        "leaky_relu": ([a], {"slope": 0.2}),
        "tanh": ([a], {}),
        "sigmoid": ([a], {}),
        "softmax": ([a], {"axis": 0}),
        "softmax_mean_one": ([a], {"axis": 0}),
        "sum": ([a], {"axis": None}),
        "mean": ([a], {}),
        "square": ([a], {}),
        "abs": ([a + np.sign(a)], {}),
        "clamp": ([a], {"lo": -0.5, "hi": 0.5}),
        "concat": ([a, b], {"axis": 1}),
        "slice_rows": ([a], {"start": 1, "stop": 3}),
    }


@pytest.mark.parametrize("trial", range(4))
def test_every_primitive_matches_finite_differences(trial):
    # 4 trials x 25 points per primitive ~= 100 random points each
    rng = np.random.default_rng(100 + trial)
    cases = _primitive_cases(rng)
    assert set(cases) == set(ad.primitive_names())
    for name, (arrays, aux) in cases.items():
        tensors = [ad.Tensor(arr, name=f"arg{i}") for i, arr in enumerate(arrays)]
        params = [(f"arg{i}", t) for i, t in enumerate(tensors)]
        seed = rng.standard_normal(ad._FORWARD[name](*arrays, **aux).shape)

        def fn():
            return ad._apply(name, *tensors, **aux)

        graph = ad.ParameterGraph(params, fn)
        graph.forward()
        analytic = graph.backward(seed)
        base = graph.parameter_vector()

        def scalar(vec):
            graph.set_parameter_vector(vec)
            return float((ad._FORWARD[name](*[t.data for t in tensors], **aux) * seed).sum())

        numeric = central_difference(scalar, base)
        graph.set_parameter_vector(base)
        err = relative_error(analytic, numeric).max()
        assert err < 1e-4, f"{name}: rel err {err}"


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        state = ad.AdamState(4, lr=1e-3)
        params = np.array([1.0, -2.0, 0.5, 3.0])
        out = ad.adam_step(state, params, np.zeros(4))
        assert np.array_equal(out, params)
        out = ad.adam_step(state, out, np.zeros(4))
        assert np.array_equal(out, params)

    def test_hand_unrolled_first_step(self):
        # m_hat = v_hat = 1 after bias correction, so the step is exactly
        # lr / (1 + eps)
        state = ad.AdamState(1, lr=1e-3, beta1=0.5, beta2=0.999, epsilon=1e-8)
        out = ad.adam_step(state, np.array([0.0]), np.array([1.0]))
        np.testing.assert_allclose(out, [-1e-3 / (1.0 + 1e-8)], rtol=1e-12)
        assert state.step_count == 1

    def test_unrolled_recursion_three_steps(self):
        lr, b1, b2, eps = 2e-3, 0.5, 0.999, 1e-8
        state = ad.AdamState(1, lr=lr, beta1=b1, beta2=b2, epsilon=eps)
        grads = [0.3, -1.2, 0.7]
        param = np.array([0.25])
        m = v = 0.0
        expected = 0.25
        for t, g in enumerate(grads, start=1):
            param = ad.adam_step(state, param, np.array([g]))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            expected -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        np.testing.assert_allclose(param, [expected], rtol=1e-12)
        assert state.step_count == 3

    def test_identical_parameters_stay_identical(self):
        rng = np.random.default_rng(2)
        state = ad.AdamState(2, lr=1e-2)
        params = np.array([0.7, 0.7])
        for _ in range(25):
            g = rng.standard_normal()
            params = ad.adam_step(state, params, np.array([g, g]))
            assert params[0] == params[1]

    def test_non_finite_gradient_names_parameter(self):
        state = ad.AdamState(
            4, lr=1e-3,
            param_slices=[("layer.weight", slice(0, 2)), ("layer.bias", slice(2, 4))],
        )
        grads = np.array([0.0, 0.0, np.nan, 0.0])
        with pytest.raises(NumericalError, match="layer.bias"):
            ad.adam_step(state, np.zeros(4), grads)

    def test_length_mismatch(self):
        state = ad.AdamState(3, lr=1e-3)
        with pytest.raises(ShapeError):
            ad.adam_step(state, np.zeros(3), np.zeros(4))


class TestSpectralNormalize:
    def test_isotropic_scaling(self):
        state = ad.SpectralState(2, np.random.default_rng(0))
        w = ad.Tensor(5.0 * np.eye(2))
        out = ad.spectral_normalize(w, state)
        np.testing.assert_allclose(out.data, np.eye(2), atol=1e-9)

    def test_diagonal_matrix_oracle(self):
        state = ad.SpectralState(2, np.random.default_rng(1))
        w = ad.Tensor(np.diag([3.0, 1.0]))
        out = None
        for _ in range(20):
            out = ad.spectral_normalize(w, state)
        np.testing.assert_allclose(out.data, np.diag([1.0, 1.0 / 3.0]), atol=1e-6)

    def test_random_matrix_vs_svd_oracle(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((8, 8))
        state = ad.SpectralState(8, rng)
        sigma_hat = state.refresh(w, 30)
        sigma_true = np.linalg.svd(w, compute_uv=False)[0]
        assert abs(sigma_hat - sigma_true) / sigma_true < 1e-3

    def test_normalized_matrix_is_nonexpansive(self):
        rng = np.random.default_rng(8)
        w = ad.Tensor(rng.standard_normal((6, 9)))
        state = ad.SpectralState(9, rng)
        out = ad.spectral_normalize(w, state, n_iterations=60)
        for _ in range(100):
            x = rng.standard_normal(6)
            assert np.linalg.norm(x @ out.data) <= (1.0 + 1e-3) * np.linalg.norm(x)

    def test_zero_matrix_passthrough(self):
        rng = np.random.default_rng(6)
        state = ad.SpectralState(3, rng)
        u_before = state.u.copy()
        w = ad.Tensor(np.zeros((4, 3)))
        out = ad.spectral_normalize(w, state)
        np.testing.assert_array_equal(out.data, np.zeros((4, 3)))
        np.testing.assert_array_equal(state.u, u_before)

    def test_u_stays_unit_norm(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((5, 7))
        state = ad.SpectralState(7, rng)
        for _ in range(15):
            state.refresh(w, 1)
            assert abs(np.linalg.norm(state.u) - 1.0) < 1e-9

    def test_gradient_flows_through_sigma(self):
        rng = np.random.default_rng(12)
        w = ad.Tensor(rng.standard_normal((3, 3)), name="w")
        state = ad.SpectralState(3, rng)
        state.refresh(w.data, 50)

        def fn(x):
            return ad.tensor_sum(ad.matmul(x, ad.normalize_with_state(w, state)))

        graph = ad.ParameterGraph([("w", w)], fn)
        x = ad.constant(rng.standard_normal((4, 3)))
        analytic, numeric = graph_gradient_check(graph, [x])
        assert relative_error(analytic, numeric).max() < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "a.weight": rng.standard_normal((3, 2)),
            "b.bias": rng.standard_normal(5),
            "scalar": np.array(4.25),
        }
        path = tmp_path / "state.ckpt"
        ad.save_checkpoint(path, tensors, step_count=17,
                           rng_state={"stream": {"state": 123}},
                           meta={"note": "x"})
        loaded, header = ad.load_checkpoint(path)
        assert header["step_count"] == 17
        assert header["rng_state"] == {"stream": {"state": 123}}
        assert header["meta"] == {"note": "x"}
        for name, arr in tensors.items():
            np.testing.assert_array_equal(loaded[name], arr)

    def test_payload_is_little_endian_float64(self, tmp_path):
        path = tmp_path / "one.ckpt"
        ad.save_checkpoint(path, {"x": np.array([1.0])})
        raw = path.read_bytes()
        payload = raw.split(b"\n", 1)[1]
        assert payload == np.array([1.0], dtype="<f8").tobytes()

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(ValueError):
            ad.load_checkpoint(path)
