import numpy as np
import pytest

from erinet import tensor as T
from erinet.attention import AttentionBlock, CrossAttentionHead, attention_block_forward, attention_head_forward
from erinet.errors import ConfigInvalid, ShapeMismatch
from erinet.tensor import Tensor


def make_head(channels=8, reduction=4, seed=0):
    return CrossAttentionHead(channels, reduction, np.random.default_rng(seed))


def test_reduction_must_divide_channels():
    with pytest.raises(ConfigInvalid):
        make_head(channels=6, reduction=4)


def test_gating_identity_limit():
    # Zero the pre-sigmoid weights and push biases high: both gates saturate
    # toward 1 and the head degenerates to plain global average pooling.
    head = make_head()
    for conv in (head.spatial_conv1, head.spatial_conv2):
        conv.weight.data[:] = 0.0
        conv.bias.data[:] = 20.0
    for fc in (head.channel_fc1, head.channel_fc2):
        fc.weight.data[:] = 0.0
        fc.bias.data[:] = 20.0
    fmap = Tensor(np.random.default_rng(1).normal(size=(2, 8, 4, 4)))
    out = attention_head_forward(head, fmap).data
    gap = fmap.data.mean(axis=(2, 3))
    np.testing.assert_allclose(out, gap, rtol=1e-6)


def test_zero_input_gives_zero_output():
    head = make_head(seed=2)
    out = attention_head_forward(head, Tensor(np.zeros((3, 8, 5, 5))))
    np.testing.assert_array_equal(out.data, np.zeros((3, 8)))


def test_gates_strictly_inside_unit_interval():
    head = make_head(seed=3)
    fmap = Tensor(np.random.default_rng(4).normal(size=(2, 8, 4, 4)))
    spatial = T.sigmoid(head.spatial_conv2(T.relu(head.spatial_conv1(fmap)))).data
    pooled = T.reduce("mean", fmap, axes=(2, 3))
    gates = T.sigmoid(head.channel_fc2(T.relu(head.channel_fc1(pooled)))).data
    assert (spatial > 0).all() and (spatial < 1).all()
    assert (gates > 0).all() and (gates < 1).all()


def test_head_gradcheck():
    with T.use_dtype(np.float64):
        rng = np.random.default_rng(5)
        head = CrossAttentionHead(8, 4, rng)
        fmap = Tensor(rng.normal(size=(2, 8, 4, 4)), requires_grad=True)
        proj = Tensor(rng.normal(size=(2, 8)))
        params = [p for _, p in head.named_parameters()] + [fmap]
        err = T.grad_check(lambda: T.reduce("sum", T.mul(attention_head_forward(head, fmap), proj)), params, eps=1e-5)
    assert err < 1e-4


def test_single_head_block_equals_head():
    rng = np.random.default_rng(6)
    block = AttentionBlock(8, heads=1, reduction=4, rng=rng)
    fmap = Tensor(np.random.default_rng(7).normal(size=(2, 8, 4, 4)))
    np.testing.assert_array_equal(
        attention_block_forward(block, fmap).data,
        attention_head_forward(block.heads[0], fmap).data,
    )


def test_identical_heads_double_the_output():
    block = AttentionBlock(8, heads=2, reduction=4, rng=np.random.default_rng(8))
    src = block.heads[0]
    dst = block.heads[1]
    for (_, a), (_, b) in zip(src.named_parameters(), dst.named_parameters()):
        b.data = a.data.copy()
    fmap = Tensor(np.random.default_rng(9).normal(size=(2, 8, 4, 4)))
    block_out = attention_block_forward(block, fmap).data
    single = attention_head_forward(src, fmap).data
    np.testing.assert_allclose(block_out, 2.0 * single, rtol=1e-6)


def test_output_shape_across_configs():
    rng = np.random.default_rng(10)
    for channels, heads, reduction in [(8, 1, 4), (16, 3, 4), (12, 2, 3)]:
        block = AttentionBlock(channels, heads, reduction, rng)
        out = attention_block_forward(block, Tensor(rng.normal(size=(2, channels, 4, 4))))
        assert out.shape == (2, channels)


def test_head_order_permutation_invariance():
    with T.use_dtype(np.float64):
        rng = np.random.default_rng(11)
        block = AttentionBlock(8, heads=4, reduction=4, rng=rng)
        fmap = Tensor(rng.normal(size=(2, 8, 4, 4)))
        base = attention_block_forward(block, fmap).data.copy()
        block.heads = [block.heads[i] for i in (2, 0, 3, 1)]
        permuted = attention_block_forward(block, fmap).data
        np.testing.assert_allclose(permuted, base, atol=1e-12)


def test_shape_mismatch_rejected():
    head = make_head(seed=12)
    with pytest.raises(ShapeMismatch):
        attention_head_forward(head, Tensor(np.zeros((2, 4, 4, 4))))
