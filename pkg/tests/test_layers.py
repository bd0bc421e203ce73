"""Layer semantics: shrinkage, thresholds, attention, FFN, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdformer.autodiff import Tensor, check_gradients
from cdformer.autodiff.ops import mul, sum_
from cdformer.errors import ConfigurationError, ContractError, DimensionError
from cdformer.layers import (Dense, FeedForward, LayerNorm, MultiHeadAttention,
                             ThresholdGenerator, load_checkpoint,
                             restore_state, save_checkpoint,
                             scaled_dot_product_attention, soft_threshold)

from conftest import margin_uniform


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestSoftThreshold:
    def test_piecewise_hand_values(self):
        x = Tensor(np.array([[[2.5, -2.5, 0.5]]]))
        lam = Tensor(np.array([[1.0]]))
        out = soft_threshold(x, lam).data.reshape(-1)
        assert out.tolist() == [1.5, -1.5, 0.0]

    def test_zero_threshold_is_identity(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 3, 5)))
        out = soft_threshold(x, Tensor(np.zeros((2, 3))))
        assert np.array_equal(out.data, x.data)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ContractError):
            soft_threshold(Tensor(np.ones((1, 1, 2))), Tensor(np.array([[-0.1]])))

    def test_shape_contract(self):
        with pytest.raises(DimensionError):
            soft_threshold(Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 3))))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_odd_in_x_and_contraction(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 4))
        lam = rng.uniform(0, 1, size=(2, 3))
        pos = soft_threshold(Tensor(x), Tensor(lam)).data
        neg = soft_threshold(Tensor(-x), Tensor(lam)).data
        assert np.allclose(neg, -pos, atol=1e-15)
        assert np.all(np.abs(pos) <= np.abs(x) + 1e-15)

    def test_contraction_strict_unless_zero_lambda(self):
        x = np.array([[[1.0, -2.0]]])
        lam = np.array([[0.5]])
        out = soft_threshold(Tensor(x), Tensor(lam)).data
        assert np.all(np.abs(out) < np.abs(x))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        # keep |x| away from both kinks (0 and lam)
        lam_value = 0.6
        x = Tensor(margin_uniform(rng, (2, 2, 4), kinks=(0.0, lam_value, -lam_value)),
                   requires_grad=True)
        lam = Tensor(np.full((2, 2), lam_value), requires_grad=True)
        forward = lambda: sum_(mul(soft_threshold(x, lam), soft_threshold(x, lam)))
        assert check_gradients(forward, [x, lam]) < 1e-4


class TestThresholdGenerator:
    def test_zero_input_zero_bias_gives_half(self):
        gen = ThresholdGenerator(4, np.random.default_rng(0))
        out = gen.forward(Tensor(np.zeros((2, 4, 6))))
        assert np.allclose(out.data, 0.5, atol=1e-15)

    def test_outputs_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(1)
        gen = ThresholdGenerator(8, rng, reduction=4)
        out = gen.forward(Tensor(rng.normal(size=(3, 8, 10)) * 50)).data
        assert np.all(out > 0) and np.all(out < 1)

    def test_matches_independent_reimplementation(self):
        rng = np.random.default_rng(42)
        gen = ThresholdGenerator(6, rng, reduction=3)
        x = rng.normal(size=(2, 6, 9))
        got = gen.forward(Tensor(x)).data
        # plain NumPy re-evaluation of pool -> relu fc -> sigmoid fc
        pooled = x.mean(axis=2)
        hidden = np.maximum(pooled @ gen.w1.data.T + gen.b1.data, 0.0)
        expected = _sigmoid(hidden @ gen.w2.data.T + gen.b2.data)
        assert np.allclose(got, expected, atol=1e-12)

    def test_reduction_floors_at_one(self):
        gen = ThresholdGenerator(2, np.random.default_rng(0), reduction=16)
        assert gen.w1.shape == (1, 2)

    def test_bad_reduction(self):
        with pytest.raises(ConfigurationError):
            ThresholdGenerator(4, np.random.default_rng(0), reduction=0)


class TestAttention:
    def test_single_position_returns_v(self):
        rng = np.random.default_rng(0)
        q = Tensor(rng.normal(size=(1, 4)))
        k = Tensor(rng.normal(size=(1, 4)))
        v = Tensor(rng.normal(size=(1, 4)))
        out = scaled_dot_product_attention(q, k, v)
        assert np.allclose(out.data, v.data, atol=1e-15)

    def test_zero_query_gives_column_mean_of_v(self):
        rng = np.random.default_rng(1)
        k = Tensor(rng.normal(size=(5, 3)))
        v = Tensor(rng.normal(size=(5, 3)))
        out = scaled_dot_product_attention(Tensor(np.zeros((5, 3))), k, v)
        assert np.allclose(out.data, np.repeat(v.data.mean(axis=0, keepdims=True), 5, 0),
                           atol=1e-12)

    def test_saturated_identity_scores_select_rows(self):
        c = 200.0
        q = Tensor(np.eye(2) * c)
        k = Tensor(np.eye(2) * c)
        v = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = scaled_dot_product_attention(q, k, v)
        assert np.allclose(out.data, v.data, atol=1e-8)

    def test_multi_head_single_identity_head_reduces_to_sdpa(self):
        rng = np.random.default_rng(2)
        mha = MultiHeadAttention(d_model=4, heads=1, rng=rng)
        eye = np.eye(4)
        for w in (mha.wq[0], mha.wk[0], mha.wv[0], mha.wo):
            w.data = eye.copy()
        x = Tensor(rng.normal(size=(6, 4)))
        direct = scaled_dot_product_attention(x, x, x)
        assert np.allclose(mha.forward(x).data, direct.data, atol=1e-12)

    @pytest.mark.parametrize("heads,d_model", [(1, 8), (2, 8), (4, 8), (2, 6)])
    def test_output_shape_contract(self, heads, d_model):
        rng = np.random.default_rng(3)
        mha = MultiHeadAttention(d_model=d_model, heads=heads, rng=rng)
        x = Tensor(rng.normal(size=(5, d_model)))
        assert mha.forward(x).shape == (5, d_model)
        batched = Tensor(rng.normal(size=(2, 5, d_model)))
        assert mha.forward(batched).shape == (2, 5, d_model)

    def test_divisibility_enforced(self):
        with pytest.raises(ConfigurationError):
            MultiHeadAttention(d_model=6, heads=4, rng=np.random.default_rng(0))

    def test_permutation_equivariance_without_positions(self):
        rng = np.random.default_rng(4)
        mha = MultiHeadAttention(d_model=6, heads=2, rng=rng)
        x = rng.normal(size=(7, 6))
        perm = rng.permutation(7)
        out = mha.forward(Tensor(x)).data
        out_perm = mha.forward(Tensor(x[perm])).data
        assert np.allclose(out_perm, out[perm], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        mha = MultiHeadAttention(d_model=4, heads=2, rng=rng)
        x = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        params = [x] + mha.parameters()
        forward = lambda: sum_(mul(mha.forward(x), mha.forward(x)))
        assert check_gradients(forward, params) < 1e-4


class TestCausalConv:
    def test_output_ignores_future_positions(self):
        from cdformer.layers import Conv1d
        rng = np.random.default_rng(0)
        conv = Conv1d(2, 3, 3, rng, causal=True)
        x = rng.normal(size=(1, 2, 10))
        base = conv.forward(Tensor(x)).data
        bumped = x.copy()
        bumped[:, :, 7] += 5.0
        out = conv.forward(Tensor(bumped)).data
        assert np.allclose(out[:, :, :7], base[:, :, :7], atol=1e-15)
        assert not np.allclose(out[:, :, 7], base[:, :, 7], atol=1e-6)

    def test_length_preserved(self):
        from cdformer.layers import Conv1d
        rng = np.random.default_rng(1)
        for kernel in (1, 2, 3, 5):
            conv = Conv1d(2, 2, kernel, rng, causal=True)
            out = conv.forward(Tensor(rng.normal(size=(2, 2, 9))))
            assert out.shape == (2, 2, 9)

    def test_causal_excludes_symmetric_options(self):
        from cdformer.layers import Conv1d
        with pytest.raises(ConfigurationError):
            Conv1d(1, 1, 3, np.random.default_rng(0), padding=1, causal=True)


class TestFeedForward:
    def test_zero_weights_yield_constant_bias(self):
        rng = np.random.default_rng(0)
        ffn = FeedForward(3, 5, rng)
        ffn.inner.w.data[:] = 0.0
        ffn.outer.w.data[:] = 0.0
        ffn.outer.b.data[:] = np.array([1.0, -2.0, 0.5])
        out = ffn.forward(Tensor(rng.normal(size=(4, 3))))
        assert np.allclose(out.data, [1.0, -2.0, 0.5], atol=1e-15)

    def test_single_position_equals_dense_relu_dense(self):
        rng = np.random.default_rng(1)
        ffn = FeedForward(3, 6, rng)
        row = rng.normal(size=(1, 3))
        hidden = np.maximum(row @ ffn.inner.w.data.T + ffn.inner.b.data, 0.0)
        expected = hidden @ ffn.outer.w.data.T + ffn.outer.b.data
        assert np.allclose(ffn.forward(Tensor(row)).data, expected, atol=1e-12)

    def test_position_independence_row_shuffle(self):
        rng = np.random.default_rng(2)
        ffn = FeedForward(4, 8, rng)
        x = rng.normal(size=(6, 4))
        perm = rng.permutation(6)
        out = ffn.forward(Tensor(x)).data
        assert np.allclose(ffn.forward(Tensor(x[perm])).data, out[perm], atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        ffn = FeedForward(3, 4, rng)
        x = Tensor(rng.uniform(-1.5, 1.5, (2, 3)), requires_grad=True)
        forward = lambda: sum_(mul(ffn.forward(x), ffn.forward(x)))
        assert check_gradients(forward, [x] + ffn.parameters()) < 1e-4


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        layer = MultiHeadAttention(d_model=8, heads=2, rng=rng)
        path = tmp_path / "layer.json"
        save_checkpoint(path, layer, header={"note": "test"})
        payload = load_checkpoint(path)
        assert payload["note"] == "test"
        clone = MultiHeadAttention(d_model=8, heads=2, rng=np.random.default_rng(99))
        restore_state(clone, payload["tensors"])
        for (name_a, a), (name_b, b) in zip(layer.named_parameters(),
                                            clone.named_parameters()):
            assert name_a == name_b
            assert np.array_equal(a.data, b.data)  # exact, not approximate

    def test_shape_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(6)
        small = Dense(2, 3, rng)
        path = tmp_path / "dense.json"
        save_checkpoint(path, small)
        wrong = Dense(2, 4, rng)
        with pytest.raises(DimensionError):
            restore_state(wrong, load_checkpoint(path)["tensors"])

    def test_buffers_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        norm = LayerNorm(4)
        bn_owner = _BnOwner()
        bn_owner.state.running_mean[:] = rng.normal(size=3)
        bn_owner.state.running_var[:] = rng.uniform(0.5, 2.0, size=3)
        path = tmp_path / "bn.json"
        save_checkpoint(path, bn_owner)
        clone = _BnOwner()
        restore_state(clone, load_checkpoint(path)["tensors"])
        assert np.array_equal(clone.state.running_mean, bn_owner.state.running_mean)
        assert np.array_equal(clone.state.running_var, bn_owner.state.running_var)
        assert norm.gamma.shape == (4,)


class _BnOwner:
    def __init__(self):
        from cdformer.layers import BatchNorm1d
        inner = BatchNorm1d(3)
        self.gamma = inner.gamma
        self.beta = inner.beta
        self.state = inner.state

    def named_parameters(self, prefix=""):
        return [(f"{prefix}gamma", self.gamma), (f"{prefix}beta", self.beta)]

    def named_buffers(self, prefix=""):
        return [(f"{prefix}state.running_mean", self.state.running_mean),
                (f"{prefix}state.running_var", self.state.running_var)]
