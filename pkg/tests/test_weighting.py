import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchweight import autodiff as ad
from batchweight.domains import CategoricalPair, density_ratio_oracle, make_preset, sample_batch
from batchweight.weighting import (
    BatchWeights,
    ClipSchedule,
    batch_softmax,
    clip_weights,
    compose_weights,
    midpoint_factor,
    uniform_weights,
)

finite_logits = st.lists(
    st.floats(-20.0, 20.0), min_size=2, max_size=64
).map(lambda vals: np.array(vals)[:, None])


def _weights(values, normalization="mean_one"):
    return BatchWeights(tensor=ad.constant(np.asarray(values, float)[:, None]),
                        normalization=normalization)


class TestBatchSoftmax:
    def test_equal_logits_mean_one(self):
        w = batch_softmax(ad.constant(np.zeros((4, 1))), "mean_one")
        np.testing.assert_array_equal(w.values, np.ones((4, 1)))

    def test_equal_logits_exact_for_odd_batch(self):
        w = batch_softmax(ad.constant(np.zeros((7, 1))), "mean_one")
        np.testing.assert_array_equal(w.values, np.ones((7, 1)))

    def test_hand_softmax_mean_one(self):
        w = batch_softmax(ad.constant(np.array([[np.log(2.0)], [0.0]])), "mean_one")
        np.testing.assert_allclose(w.values.ravel(), [4.0 / 3.0, 2.0 / 3.0], rtol=1e-14)

    def test_hand_softmax_sum_one(self):
        w = batch_softmax(ad.constant(np.array([[np.log(2.0)], [0.0]])), "sum_one")
        np.testing.assert_allclose(w.values.ravel(), [2.0 / 3.0, 1.0 / 3.0], rtol=1e-14)

    @settings(max_examples=80, deadline=None)
    @given(logits=finite_logits)
    def test_mean_one_constraint_always_holds(self, logits):
        w = batch_softmax(ad.constant(logits), "mean_one")
        assert abs(w.values.mean() - 1.0) <= 1e-9
        assert (w.values >= 0.0).all()

    @settings(max_examples=80, deadline=None)
    @given(logits=finite_logits, shift=st.floats(-30.0, 30.0))
    def test_shift_invariance(self, logits, shift):
        w0 = batch_softmax(ad.constant(logits), "mean_one").values
        w1 = batch_softmax(ad.constant(logits + shift), "mean_one").values
        np.testing.assert_allclose(w0, w1, rtol=1e-9, atol=1e-12)

    def test_normalization_validated(self):
        with pytest.raises(ValueError):
            batch_softmax(ad.constant(np.zeros((3, 1))), "sum_two")


class _StubNet:
    """Weight-network stand-in emitting fixed logits for stacked batches."""

    def __init__(self, logits_by_call):
        self.logits = [np.asarray(l, float)[:, None] for l in logits_by_call]
        self.calls = 0

    def forward(self, x):
        out = ad.constant(self.logits[self.calls % len(self.logits)])
        self.calls += 1
        return out

    forward_pair = None

    def forward_pair(self, x, y):  # noqa: F811
        return self.forward(x)


class TestCompose:
    def _tensors(self, m, d=2):
        z = ad.constant(np.zeros((m, d)))
        return z, z, z, z

    @pytest.mark.parametrize("strategy,nets", [
        ("concat", lambda m: {"wnet": _StubNet([np.zeros(2 * m)])}),
        ("one_sided", lambda m: {"wnet": _StubNet([np.zeros(2 * m)])}),
        ("composite", lambda m: {"wnet_x": _StubNet([np.zeros(2 * m)]),
                                 "wnet_y": _StubNet([np.zeros(2 * m)])}),
    ])
    def test_zero_logits_give_unit_weights(self, strategy, nets):
        m = 6
        x, gx, y, gy = self._tensors(m)
        w_x, w_y = compose_weights(strategy, nets(m), x, gx, y, gy)
        np.testing.assert_array_equal(w_x.values, np.ones((m, 1)))
        np.testing.assert_array_equal(w_y.values, np.ones((m, 1)))

    def test_composite_is_arithmetic_mean_of_sigma_terms(self):
        rng = np.random.default_rng(0)
        m = 8
        lx = rng.standard_normal(2 * m)
        ly = rng.standard_normal(2 * m)
        nets = {"wnet_x": _StubNet([lx]), "wnet_y": _StubNet([ly])}
        x, gx, y, gy = self._tensors(m)
        w_x, w_y = compose_weights("composite", nets, x, gx, y, gy)

        def sigma(v):
            e = np.exp(v - v.max())
            return e * (len(v) / e.sum())

        expect_x = 0.5 * (sigma(lx[:m]) + sigma(-ly[:m]))
        expect_y = 0.5 * (sigma(-lx[m:]) + sigma(ly[m:]))
        np.testing.assert_allclose(w_x.values.ravel(), expect_x, rtol=1e-12)
        np.testing.assert_allclose(w_y.values.ravel(), expect_y, rtol=1e-12)
        floor = 0.5 * np.minimum(sigma(lx[:m]), sigma(-ly[:m]))
        assert (w_x.values.ravel() >= floor - 1e-12).all()

    def test_concat_recovers_oracle_ratios_on_frozen_toy(self):
        # logits fixed at log of the oracle ratio per mode: per-mode mean
        # weights then reproduce the oracle within sampling noise
        pair = make_preset("twoclass-skew")
        cat = pair.categorical()
        oracle = density_ratio_oracle(cat)
        rng = np.random.default_rng(3)
        m = 512
        batch = sample_batch(pair.source, m, rng)
        logits = np.log(oracle)[batch.labels]
        stacked = np.concatenate([logits, np.zeros(m)])
        nets = {"wnet": _StubNet([stacked])}
        x = ad.constant(batch.points)
        w_x, _ = compose_weights("concat", nets, x, x, x, x)
        for k in (0, 1):
            got = w_x.values.ravel()[batch.labels == k].mean()
            assert abs(got - oracle[k]) / oracle[k] < 0.05

    def test_unknown_strategy(self):
        x = ad.constant(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            compose_weights("mystery", {}, x, x, x, x)

    def test_gradient_through_composition(self):
        # finite differences through a real weight net and the composition
        from batchweight.nets import WeightNet, WeightNetConfig
        from helpers import central_difference, relative_error
        rng = np.random.default_rng(1)
        net = WeightNet("w", WeightNetConfig(data_dim=2, width=8, n_layers=2), rng)
        m = 4
        x = ad.constant(rng.standard_normal((m, 2)))
        gx = ad.constant(rng.standard_normal((m, 2)))
        seed = rng.standard_normal((m, 1))

        def fn():
            w_x, _ = compose_weights("one_sided", {"wnet": net}, x, gx, x, gx)
            return w_x.tensor

        graph = ad.ParameterGraph(net.parameters(), fn)
        graph.forward()
        analytic = graph.backward(seed)
        base = graph.parameter_vector()

        def scalar(vec):
            graph.set_parameter_vector(vec)
            w_x, _ = compose_weights("one_sided", {"wnet": net}, x, gx, x, gx)
            return float((w_x.values * seed).sum())

        numeric = central_difference(scalar, base)
        graph.set_parameter_vector(base)
        assert relative_error(analytic, numeric).max() < 1e-4


class TestMidpointFactor:
    def test_unit_weights_give_unit_factors(self):
        f = midpoint_factor(_weights([1.0, 1.0, 1.0]))
        np.testing.assert_array_equal(f.data, np.ones((3, 1)))

    def test_worked_value(self):
        f = midpoint_factor(_weights([0.4, 1.6]))
        np.testing.assert_allclose(f.data.ravel(), [0.7, 1.3], rtol=1e-15)

    def test_mean_factor_is_one_for_mean_one_weights(self):
        rng = np.random.default_rng(0)
        w = batch_softmax(ad.constant(rng.standard_normal((32, 1))), "mean_one")
        f = midpoint_factor(w)
        assert abs(f.data.mean() - 1.0) < 1e-12


class TestClip:
    def schedule(self, bound=2.0, factor=1.5, every=100):
        return ClipSchedule(initial_ratio_bound=bound, relax_factor=factor,
                            relax_every=every)

    def test_within_bound_unchanged(self):
        w = _weights([1.2, 0.8, 1.0])
        out = clip_weights(w, self.schedule(), step=0)
        assert out is w

    def test_spread_weights_clipped_and_renormalized(self):
        w = _weights(np.array([3.8, 0.1, 0.1]) / 4.0, "sum_one")
        out = clip_weights(w, self.schedule(bound=2.0), step=0)
        vals = out.values
        assert vals.max() / vals.min() <= 4.0 + 1e-9
        assert abs(vals.sum() - 1.0) <= 1e-9

    def test_mean_one_case(self):
        w = _weights([3.8, 0.1, 0.1] / np.mean([3.8, 0.1, 0.1]))
        out = clip_weights(w, self.schedule(bound=2.0), step=0)
        assert out.values.max() / out.values.min() <= 4.0 + 1e-9
        assert abs(out.values.mean() - 1.0) <= 1e-9

    def test_infinite_bound_is_identity(self):
        w = _weights([5.0, 0.01, 0.2] / np.mean([5.0, 0.01, 0.2]))
        out = clip_weights(w, ClipSchedule(initial_ratio_bound=np.inf), step=10)
        assert out is w

    def test_bound_relaxes_and_never_tightens(self):
        sched = self.schedule(bound=3.0, factor=1.5, every=10)
        bounds = [sched.bound(s) for s in range(0, 60)]
        assert bounds[0] == 3.0
        assert bounds[10] == 4.5
        assert all(b2 >= b1 for b1, b2 in zip(bounds, bounds[1:]))

    @settings(max_examples=60, deadline=None)
    @given(logits=finite_logits, bound=st.floats(1.1, 8.0))
    def test_clip_preserves_order_and_normalization(self, logits, bound):
        w = batch_softmax(ad.constant(logits), "mean_one")
        out = clip_weights(w, ClipSchedule(initial_ratio_bound=bound), step=0)
        vals, raw = out.values.ravel(), w.values.ravel()
        assert abs(vals.mean() - 1.0) <= 1e-9
        assert vals.max() <= (bound ** 2) * vals.min() * (1.0 + 1e-9)
        order = np.argsort(raw, kind="stable")
        assert (np.diff(vals[order]) >= -1e-12).all()

    def test_uniform_weights_helper(self):
        w = uniform_weights(5)
        np.testing.assert_array_equal(w.values, np.ones((5, 1)))
        w = uniform_weights(5, "sum_one")
        np.testing.assert_allclose(w.values, 0.2)

    def test_invalid_schedule(self):
        with pytest.raises(ValueError):
            ClipSchedule(initial_ratio_bound=1.0)
        with pytest.raises(ValueError):
            ClipSchedule(relax_factor=0.5)


class TestBatchWeightsValidation:
    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            _weights([1.5, -0.5, 2.0])

    def test_wrong_mean_rejected(self):
        with pytest.raises(ValueError):
            _weights([2.0, 2.0])
