import numpy as np
import pytest

from bmdfusion.config import CrossAttentionBranchConfig
from bmdfusion.errors import ConfigError, DimensionError
from bmdfusion.model.xattn import (
    AttentionTrace,
    CrossAttentionBranch,
    attention_scores,
    branch_forward,
    fuse_bidirectional,
    head_output,
    kv_update,
    layer_output,
    project_qkv,
)
from bmdfusion.tensor import Tensor, ops
from bmdfusion.tensor.gradcheck import check_gradients


def make_branch(seed=0, dq=8, dk=6, n_layers=3, n_heads=2):
    cfg = CrossAttentionBranchConfig(query_dim=dq, kv_dim=dk, n_layers=n_layers, n_heads=n_heads,
                                     updater_dropout_p=0.0)
    return CrossAttentionBranch(cfg, np.random.default_rng(seed))


def tokens(rng, b, t, d):
    return Tensor(rng.standard_normal((b, t, d)))


def check_random_configs(n_configs, seed):
    rng = np.random.default_rng(seed)
    for trial in range(n_configs):
        n_heads = int(rng.integers(1, 4))
        dq = n_heads * int(rng.integers(1, 4))
        dk = int(rng.integers(1, 7))
        tq, tk = int(rng.integers(1, 6)), int(rng.integers(1, 12))
        branch = make_branch(trial, dq, dk, n_layers=int(rng.integers(1, 4)), n_heads=n_heads)
        _, trace = branch(tokens(rng, 2, tq, dq), tokens(rng, 2, tk, dk))
        for weights in trace.layers:
            assert weights.shape == (2, n_heads, tq, tk)
            np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_rows_sum_to_one_on_random_configs():
    check_random_configs(200, seed=11)


@pytest.mark.slow
def test_attention_rows_sum_to_one_sweep():
    check_random_configs(1000, seed=12)


def test_single_key_gets_all_the_weight(rng):
    branch = make_branch(dk=4)
    _, trace = branch(tokens(rng, 3, 5, 8), tokens(rng, 3, 1, 4))
    for weights in trace.layers:
        np.testing.assert_allclose(weights, 1.0, atol=1e-12)


def test_zero_fusion_weight_annihilates_heads(rng):
    weights = ops.softmax(Tensor(rng.standard_normal((2, 2, 3, 4))))
    v = Tensor(rng.standard_normal((2, 2, 4, 5)))
    out = head_output(weights, v, Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_fusion_weight_scales_linearly(rng):
    weights = ops.softmax(Tensor(rng.standard_normal((2, 2, 3, 4))))
    v = Tensor(rng.standard_normal((2, 2, 4, 5)))
    base = head_output(weights, v, Tensor(np.ones(1))).data
    scaled = head_output(weights, v, Tensor(np.full(1, 2.5))).data
    np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-15)


def test_scores_are_scaled_dot_products(rng):
    q = Tensor(rng.standard_normal((1, 2, 3, 4)))
    k = Tensor(rng.standard_normal((1, 2, 5, 4)))
    expected = q.data @ np.swapaxes(k.data, -1, -2) / 2.0
    np.testing.assert_allclose(attention_scores(q, k).data, expected, rtol=1e-12)


def test_projection_dims_are_checked(rng):
    branch = make_branch(dq=8, dk=6)
    layer = branch.layers[0]
    with pytest.raises(ConfigError):
        project_qkv(tokens(rng, 2, 3, 8), tokens(rng, 2, 4, 5), layer, 2)
    with pytest.raises(ConfigError):
        project_qkv(tokens(rng, 2, 3, 8), tokens(rng, 2, 4, 6), layer, 3)
    q, k, v = project_qkv(tokens(rng, 2, 3, 8), tokens(rng, 2, 4, 6), layer, 2)
    assert q.shape == (2, 2, 3, 4) and k.shape == (2, 2, 4, 4) and v.shape == (2, 2, 4, 4)


def test_layer_output_checks_head_count(rng):
    branch = make_branch()
    with pytest.raises(DimensionError):
        layer_output(Tensor(rng.standard_normal((2, 4, 3, 2))), branch.layers[0].w_o, 2)
    out = layer_output(Tensor(rng.standard_normal((2, 2, 3, 4))), branch.layers[0].w_o, 2)
    assert out.shape == (2, 3, 8)


def test_kv_update_matches_formula(rng):
    branch = make_branch(dk=6)
    updater = branch.updaters[0]
    y = rng.standard_normal((2, 4, 6))
    mu = y.mean(axis=-1, keepdims=True)
    normed = (y - mu) / np.sqrt(y.var(axis=-1, keepdims=True) + 1e-5)
    z = normed @ updater.linear.weight.data + updater.linear.bias.data
    gelu = 0.5 * z * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (z + 0.044715 * z ** 3)))
    expected = y + 0.5 * gelu
    np.testing.assert_allclose(kv_update(Tensor(y), updater).data, expected, rtol=1e-10, atol=1e-12)


def test_updaters_sit_between_layers():
    assert len(make_branch(n_layers=3).updaters) == 2
    assert make_branch(n_layers=1).updaters == []


def test_branch_output_is_pooled_over_queries(rng):
    branch = make_branch(dq=8, dk=6, n_layers=2)
    out, trace = branch(tokens(rng, 3, 5, 8), tokens(rng, 3, 7, 6), key_names=[f"k{i}" for i in range(7)])
    assert out.shape == (3, 8)
    assert len(trace.layers) == 2
    assert trace.key_names == tuple(f"k{i}" for i in range(7))


def test_branch_is_invariant_to_token_order(rng):
    branch = make_branch(dq=8, dk=6, n_layers=2)
    x, y = tokens(rng, 2, 5, 8), tokens(rng, 2, 7, 6)
    base, _ = branch(x, y)
    shuffled_x = Tensor(x.data[:, rng.permutation(5)])
    shuffled_y = Tensor(y.data[:, rng.permutation(7)])
    out, _ = branch(shuffled_x, shuffled_y)
    np.testing.assert_allclose(out.data, base.data, rtol=1e-10, atol=1e-12)


def test_field_attention_rows_sum_to_one(rng):
    branch = make_branch(dq=8, dk=6, n_layers=3)
    _, trace = branch(tokens(rng, 4, 3, 8), tokens(rng, 4, 10, 6))
    np.testing.assert_allclose(trace.field_attention().sum(axis=-1), 1.0, atol=1e-10)
    for layer in range(3):
        np.testing.assert_allclose(trace.field_attention(layer).sum(axis=-1), 1.0, atol=1e-10)
    assert trace.head_mean(0).shape == (4, 3, 10)


def test_fuse_bidirectional_concatenates_both_branches(rng):
    i2m = make_branch(1, dq=8, dk=6)
    m2i = make_branch(2, dq=6, dk=8)
    img, meta = tokens(rng, 2, 4, 8), tokens(rng, 2, 10, 6)
    fused, img_trace, meta_trace = fuse_bidirectional(img, meta, i2m, m2i, field_names=[f"f{i}" for i in range(10)])
    assert fused.shape == (2, 14)
    np.testing.assert_array_equal(fused.data[:, :8], branch_forward(img, meta, i2m)[0].data)
    assert img_trace.key_names[0] == "f0"
    assert meta_trace.key_names == ("img_0", "img_1", "img_2", "img_3")


def test_branch_gradients(rng):
    branch = make_branch(dq=4, dk=3, n_layers=2, n_heads=2)
    x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    y = Tensor(rng.standard_normal((2, 5, 3)), requires_grad=True)
    w = Tensor(np.random.default_rng(4).standard_normal((2, 4)))
    targets = [x, y] + branch.parameters()

    def loss():
        out, _ = branch(x, y)
        return ops.reduce_sum(ops.mul(out, w))

    assert check_gradients(loss, targets) < 1e-4


def test_empty_trace_defaults():
    trace = AttentionTrace()
    assert trace.layers == [] and trace.key_names == ()


def test_kv_update_gradients(rng):
    updater = make_branch(dk=5).updaters[0]
    y = Tensor(rng.standard_normal((2, 4, 5)), requires_grad=True)
    w = Tensor(np.random.default_rng(8).standard_normal((2, 4, 5)))
    targets = [y, updater.norm.gain, updater.norm.bias, updater.linear.weight, updater.linear.bias]

    def loss():
        return ops.reduce_sum(ops.mul(kv_update(y, updater), w))

    assert check_gradients(loss, targets) < 1e-4


def unrolled_branch(branch, x, y):
    """the branch written out in plain numpy, one head at a time"""
    n_heads = branch.cfg.n_heads
    for i, layer in enumerate(branch.layers):
        q, k, v = x @ layer.w_q.data, y @ layer.w_k.data, y @ layer.w_v.data
        hd = q.shape[-1] // n_heads
        heads = []
        for h in range(n_heads):
            cols = slice(h * hd, (h + 1) * hd)
            scores = q[..., cols] @ np.swapaxes(k[..., cols], -1, -2) / np.sqrt(hd)
            scores = np.exp(scores - scores.max(axis=-1, keepdims=True))
            weights = scores / scores.sum(axis=-1, keepdims=True)
            heads.append(layer.fusion_weight.data[0] * (weights @ v[..., cols]))
        x = np.concatenate(heads, axis=-1) @ layer.w_o.weight.data + layer.w_o.bias.data
        if i < len(branch.updaters):
            updater = branch.updaters[i]
            mu = y.mean(axis=-1, keepdims=True)
            normed = (y - mu) / np.sqrt(y.var(axis=-1, keepdims=True) + 1e-5)
            z = (normed * updater.norm.gain.data + updater.norm.bias.data) @ updater.linear.weight.data
            z = z + updater.linear.bias.data
            gelu = 0.5 * z * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (z + 0.044715 * z ** 3)))
            y = y + branch.cfg.updater_residual_scale * gelu
    return x.mean(axis=1)


def test_branch_matches_unrolled_reference(rng):
    branch = make_branch(dq=6, dk=4, n_layers=3, n_heads=3)
    for layer, fw in zip(branch.layers, (0.7, 1.3, -0.4)):
        layer.fusion_weight.data[:] = fw
    x, y = rng.standard_normal((2, 5, 6)), rng.standard_normal((2, 7, 4))
    out, _ = branch_forward(Tensor(x), Tensor(y), branch)
    np.testing.assert_allclose(out.data, unrolled_branch(branch, x, y), rtol=1e-10, atol=1e-12)


def test_permuting_keys_permutes_attention_columns(rng):
    branch = make_branch(dq=8, dk=6, n_layers=3)
    x, y = tokens(rng, 2, 4, 8), tokens(rng, 2, 7, 6)
    names = [f"field_{i}" for i in range(7)]
    perm = rng.permutation(7)
    _, base = branch(x, y, key_names=names)
    _, moved = branch(x, Tensor(y.data[:, perm]), key_names=[names[i] for i in perm])
    for before, after in zip(base.layers, moved.layers):
        np.testing.assert_allclose(after, before[..., perm], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(moved.field_attention(), base.field_attention()[:, perm], rtol=1e-10, atol=1e-12)
    assert moved.key_names == tuple(names[i] for i in perm)
