import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intmamba import approx, qnum
from intmamba.approx import NormParams, PiecewiseLinearFn
from intmamba.errors import ConfigError, FitError
from intmamba.qnum import QTensor


def test_oracles():
    assert approx.silu_ref(0.0) == 0.0
    assert approx.exp_ref(0.0) == 1.0
    assert approx.softplus_ref(0.0) == pytest.approx(np.log(2.0))
    # large |x| must not overflow
    assert approx.silu_ref(-1000.0) == 0.0 and approx.silu_ref(1000.0) == 1000.0


class TestFit:
    def test_silu_segments_and_bound(self):
        fn = approx.silu_approx()
        assert fn.n_segments <= 20
        assert approx.max_error(fn, "silu") <= 0.03

    def test_exp_segments_and_bound(self):
        fn = approx.exp_approx()
        assert fn.n_segments <= 13
        assert approx.max_error(fn, "exp") <= 0.03

    def test_identity_one_segment(self):
        fn = approx.fit_piecewise("identity", (-3.0, 5.0), 0.01, "absolute")
        assert fn.n_segments == 1
        assert approx.max_error(fn, "identity") < 1e-12

    def test_continuity(self):
        for fn in (approx.silu_approx(), approx.exp_approx()):
            bp = np.asarray(fn.breakpoints[1:-1])
            m, c = np.asarray(fn.slopes), np.asarray(fn.intercepts)
            left = m[:-1] * bp + c[:-1]
            right = m[1:] * bp + c[1:]
            assert np.max(np.abs(left - right)) < 2 ** -20

    def test_exp_monotone(self):
        fn = approx.exp_approx()
        y = fn(np.linspace(-4, 1, 100_000))
        assert np.all(np.diff(y) >= 0)

    def test_out_of_range_policies(self):
        silu, exp = approx.silu_approx(), approx.exp_approx()
        assert silu(-9.0) == 0.0 and silu(10.0) == 10.0
        assert exp(-5.0) == 0.0 and exp(3.0) == pytest.approx(np.e)

    def test_unattainable_bound(self):
        with pytest.raises(FitError) as info:
            approx.fit_piecewise("silu", (-7, 7), 1e-5)
        assert info.value.achieved_error is not None

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            approx.fit_piecewise("silu", (1, 1), 0.03)
        with pytest.raises(ConfigError):
            approx.fit_piecewise("tanh", (0, 1), 0.03)
        with pytest.raises(ConfigError):
            approx.fit_piecewise("silu", (0, 1), 0.0)

    def test_json_roundtrip(self, tmp_path):
        fn = approx.silu_approx().with_quantized(approx.silu_approx().quantize(-5, -5, 8))
        fn.save(tmp_path / "silu.json")
        back = PiecewiseLinearFn.load(tmp_path / "silu.json")
        assert back == fn
        assert back.quantized_forms == fn.quantized_forms


class TestEvalPiecewise:
    @pytest.mark.parametrize("in_s,out_s", [(-4, -4), (-5, -6), (-3, -5), (-6, -4)])
    def test_exhaustive_within_one_lsb(self, in_s, out_s):
        fn = approx.silu_approx()
        qf = fn.quantize(in_s, out_s, 8)
        x = QTensor(np.arange(-128, 128), 8, in_s)
        got = approx.eval_piecewise(qf, x).data
        real = fn(qnum.dequantize(x))
        expected = qnum.saturate(qnum.round_half_away(np.ldexp(real, -out_s)), 8)
        assert np.max(np.abs(got - expected)) <= 1

    def test_exp_exhaustive(self):
        fn = approx.exp_approx()
        qf = fn.quantize(-5, -7, 8)
        x = QTensor(np.arange(-128, 128), 8, -5)
        got = approx.eval_piecewise(qf, x).data
        expected = qnum.saturate(qnum.round_half_away(np.ldexp(fn(qnum.dequantize(x)), 7)), 8)
        assert np.max(np.abs(got - expected)) <= 1

    def test_silu_examples(self):
        qf = approx.silu_approx().quantize(-3, -3, 8)
        x = QTensor(np.array([0, 80, -72]), 8, -3)  # 0, 10, -9
        assert qnum.dequantize(approx.eval_piecewise(qf, x)).tolist() == [0.0, 10.0, 0.0]

    def test_scale_mismatch(self):
        qf = approx.silu_approx().quantize(-3, -3, 8)
        with pytest.raises(ConfigError):
            approx.eval_piecewise(qf, QTensor([0], 8, -4))


def norm(gamma, beta):
    return NormParams(np.asarray(gamma, float), np.asarray(beta, float))


class TestRangeNorm:
    def test_examples(self):
        x = QTensor([1, 2, 3], 8, 0)
        out = approx.range_norm(x, norm([1, 1, 1], [0, 0, 0]), -6)
        assert qnum.dequantize(out).tolist() == [-0.5, 0.0, 0.5]
        out = approx.range_norm(x, norm([2, 2, 2], [1, 1, 1]), -5)
        assert qnum.dequantize(out).tolist() == [0.0, 1.0, 2.0]

    def test_zero_range_gives_beta(self):
        out = approx.range_norm(QTensor([5, 5, 5], 8, 0), norm([3, 1, 2], [0.25, 0.25, 0.25]), -6)
        assert qnum.dequantize(out).tolist() == [0.25, 0.25, 0.25]

    @settings(max_examples=100)
    @given(st.lists(st.integers(-128, 127), min_size=2, max_size=32))
    def test_pre_affine_bounded(self, vals):
        n = len(vals)
        out = approx.range_norm(QTensor(vals, 8, -3), norm(np.ones(n), np.zeros(n)), -7)
        assert np.all(np.abs(qnum.dequantize(out)) <= 1.0)

    @settings(max_examples=100)
    @given(st.lists(st.integers(-60, 60), min_size=2, max_size=16), st.integers(-60, 60))
    def test_translation_invariance(self, vals, c):
        n = len(vals)
        p = norm(np.ones(n), np.zeros(n))
        a = approx.range_norm(QTensor(vals, 8, 0), p, -6).data
        b = approx.range_norm(QTensor(np.asarray(vals) + c, 8, 0), p, -6).data
        assert np.max(np.abs(a - b)) <= 1

    def test_matches_float_reference(self):
        rng = np.random.default_rng(3)
        p = norm(rng.uniform(0.5, 1.5, 16), rng.uniform(-0.2, 0.2, 16))
        x = qnum.quantize(rng.normal(size=(50, 16)), -5, 8)
        out = approx.range_norm(x, p, -6)
        ref = approx.range_norm_ref(qnum.dequantize(x), p)
        assert np.max(np.abs(qnum.dequantize(out) - ref)) <= 2 * 2.0 ** -6

    def test_feature_mismatch(self):
        with pytest.raises(ConfigError):
            approx.range_norm(QTensor([1, 2], 8, 0), norm([1, 1, 1], [0, 0, 0]), -6)


class TestLayerNormRef:
    def test_examples(self):
        out = approx.layer_norm_ref([1.0, -1.0], NormParams([1, 1], [0, 0], epsilon=0.0))
        assert out.tolist() == [1.0, -1.0]
        const = approx.layer_norm_ref([4.0, 4.0, 4.0], NormParams([2, 2, 2], [0.5, 0.5, 0.5]))
        assert const.tolist() == [0.5, 0.5, 0.5]

    def test_statistics(self):
        x = np.random.default_rng(0).normal(3, 2, 64)
        out = approx.layer_norm_ref(x, NormParams(np.ones(64), np.zeros(64), epsilon=0.0))
        assert abs(out.mean()) < 1e-6 and abs(out.std() - 1) < 1e-6


class TestReluSoftplus:
    def test_examples(self):
        assert approx.relu_softplus(QTensor([-5], 8, 0)).data.tolist() == [0]
        assert approx.relu_softplus(QTensor([7], 8, 0)).data.tolist() == [7]

    def test_against_softplus(self):
        x = QTensor(np.arange(-128, 128), 8, -3)
        relu = qnum.dequantize(approx.relu_softplus(x))
        exact = approx.softplus_ref(qnum.dequantize(x))
        assert np.max(np.abs(relu - exact)) <= np.log(2.0) + 1e-12
        far = np.abs(qnum.dequantize(x)) >= 15
        assert np.max(np.abs(relu - exact)[far]) < 1e-6
