import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hremrg import tensor as T
from hremrg.attention import (
    attention_block, bilinear_pool, encode_stack, init_attention_params, init_encoder_params,
)
from hremrg.errors import EmptyRegionError, ShapeError


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


def scripted_block(K, V, Q, p):
    """Region-by-region evaluation of the block with plain numpy."""
    a = {k: v.data for k, v in p.items()}
    mk = [elu(a["W_k"] @ k + a["b_k"]) * elu(a["W_qk"] @ Q + a["b_qk"]) for k in K]
    mv = [elu(a["W_v"] @ v + a["b_v"]) * elu(a["W_qv"] @ Q + a["b_qv"]) for v in V]
    mk2 = [np.maximum(a["W_mk"] @ m + a["b_mk"], 0) for m in mk]
    logits = np.array([(a["W_s"] @ m)[0] for m in mk2])
    spatial = np.exp(logits - logits.max())
    spatial /= spatial.sum()
    gate = sigmoid(a["W_e"] @ (sum(mk2) / len(mk2)) + a["b_e"])
    channel_branch = a["W_c"] @ (gate * (sum(mv) / len(mv)))
    spatial_branch = sum(w * m for w, m in zip(spatial, mv))
    return a["W_o"] @ np.concatenate([channel_branch, spatial_branch]) + a["b_o"], spatial, gate


def block(d=4, d_b=None, seed=0):
    return init_attention_params(np.random.default_rng(seed), d, d_b)


def test_bilinear_pool_hand_values():
    p = block(2, 2)
    p["W_k"].data[:] = [[1, 0], [0, 2]]
    p["W_qk"].data[:] = [[1, 1], [0, 1]]
    p["W_v"].data[:] = [[0, 1], [1, 0]]
    p["W_qv"].data[:] = np.eye(2)
    K = np.array([[1.0, -1.0]])
    Q = np.array([0.5, 2.0])
    m_k, m_v = bilinear_pool(T.Tensor(Q), T.Tensor(K), T.Tensor(K), p)
    np.testing.assert_allclose(m_k.data, [[1 * 2.5, elu(-2.0) * 2.0]], atol=1e-15)
    np.testing.assert_allclose(m_v.data, [[elu(-1.0) * 0.5, 1 * 2.0]], atol=1e-15)


def test_bilinear_pool_annihilated_by_zero_query_branch():
    p = block(3)
    p["W_qk"].data[:] = 0
    m_k, _ = bilinear_pool(T.Tensor(np.ones(3)), T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))), p)
    np.testing.assert_array_equal(m_k.data, 0)


def test_bilinear_pool_width_mismatch():
    with pytest.raises(ShapeError):
        bilinear_pool(T.Tensor(np.ones(3)), T.Tensor(np.ones((2, 5))), T.Tensor(np.ones((2, 5))), block(3))


def test_block_matches_scripted_oracle():
    rng = np.random.default_rng(1)
    p = block(2, 2, seed=1)
    for name in p:
        p[name].data[:] = rng.normal(size=p[name].shape)
    K, V, Q = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=2)
    out = attention_block(T.Tensor(K), T.Tensor(V), T.Tensor(Q), p, return_weights=True)
    ref, spatial, gate = scripted_block(K, V, Q, p)
    np.testing.assert_allclose(out.attended.data, ref, atol=1e-13)
    np.testing.assert_allclose(out.spatial, spatial, atol=1e-15)
    np.testing.assert_allclose(out.channel, gate, atol=1e-15)


def test_single_region_and_neutral_gate():
    p = block(4)
    out = attention_block(T.Tensor(np.ones((1, 4))), T.Tensor(np.ones((1, 4))), T.Tensor(np.ones(4)), p,
                          return_weights=True)
    assert out.spatial.tolist() == [1.0]
    p["W_e"].data[:] = 0
    out = attention_block(T.Tensor(np.ones((3, 4))), T.Tensor(np.ones((3, 4))), T.Tensor(np.ones(4)), p,
                          return_weights=True)
    np.testing.assert_array_equal(out.channel, 0.5)


def test_empty_regions_rejected():
    with pytest.raises(EmptyRegionError):
        attention_block(T.Tensor(np.zeros((0, 4))), T.Tensor(np.zeros((0, 4))), T.Tensor(np.ones(4)), block(4))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(2, 6))
def test_block_invariants(seed, n, d):
    rng = np.random.default_rng(seed)
    p = block(d, seed=seed)
    K, V, Q = rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=d)
    out = attention_block(T.Tensor(K), T.Tensor(V), T.Tensor(Q), p, return_weights=True)
    assert np.all(out.spatial >= 0) and abs(out.spatial.sum() - 1) <= 1e-12
    assert np.all((out.channel > 0) & (out.channel < 1))
    perm = rng.permutation(n)
    moved = attention_block(T.Tensor(K[perm]), T.Tensor(V[perm]), T.Tensor(Q), p, return_weights=True)
    np.testing.assert_allclose(moved.attended.data, out.attended.data, atol=1e-10)
    np.testing.assert_allclose(moved.spatial, out.spatial[perm], atol=1e-12)


def test_block_gradient_check():
    rng = np.random.default_rng(2)
    p = block(4, seed=2)
    K, V, Q = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=4)
    assert T.grad_check(lambda: T.total(attention_block(T.Tensor(K), T.Tensor(V), T.Tensor(Q), p)), p) < 1e-4


@pytest.mark.parametrize("depth", range(1, 7))
def test_stack_history_length(depth):
    rng = np.random.default_rng(depth)
    params = init_encoder_params(rng, 4, depth)
    X = rng.normal(size=(3, 4))
    attended, K, V = encode_stack(T.Tensor(X), T.Tensor(X.mean(0)), params)
    assert len(attended) == depth
    assert K.shape == V.shape == (3, 4)


def test_stack_depth_one_updates_once():
    rng = np.random.default_rng(0)
    params = init_encoder_params(rng, 4, 2)
    X = rng.normal(size=(3, 4))
    _, K1, _ = encode_stack(T.Tensor(X), T.Tensor(X.mean(0)), params, depth=1)
    attended, _, _ = encode_stack(T.Tensor(X), T.Tensor(X.mean(0)), params, depth=1)
    f1 = attended[0]
    joined = np.concatenate([np.tile(f1.data, (3, 1)), X], axis=1)
    upd = np.maximum(joined @ params["enc.0.W_k"].data.T + params["enc.0.b_k"].data, 0) + X
    norm = (upd - upd.mean(1, keepdims=True)) / np.sqrt(upd.var(1, keepdims=True) + 1e-5)
    np.testing.assert_allclose(K1.data, norm, atol=1e-12)


def test_stack_region_permutation():
    rng = np.random.default_rng(3)
    params = init_encoder_params(rng, 4, 4)
    X = rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    a1, K1, V1 = encode_stack(T.Tensor(X), T.Tensor(X.mean(0)), params)
    a2, K2, V2 = encode_stack(T.Tensor(X[perm]), T.Tensor(X.mean(0)), params)
    for x, y in zip(a1, a2):
        np.testing.assert_allclose(x.data, y.data, atol=1e-10)
    np.testing.assert_allclose(K2.data, K1.data[perm], atol=1e-10)
    np.testing.assert_allclose(V2.data, V1.data[perm], atol=1e-10)


def test_deep_stack_small_gradients_match_wide_stencil():
    # entries with |grad| ~ 1e-8 drown in rounding noise at eps=1e-5; a
    # 4-point stencil at a wide step resolves them
    from hremrg.attention import encode_stack, init_encoder_params

    rng = np.random.default_rng(0)
    params = init_encoder_params(rng, 8, 4)
    X = T.Tensor(rng.normal(size=(3, 8)))
    readout = rng.normal(size=8 * 4 + 2 * 3 * 8)

    def f():
        att, K, V = encode_stack(X, T.mean(X, axis=0), params)
        return T.total(T.mul(T.concat([*att, T.reshape(K, (24,)), T.reshape(V, (24,))]), readout))

    with T.GradTape() as tape:
        loss = f()
    grads = T.backward(tape, loss, params)
    eps = 1e-2
    with T.no_grad():
        for name in ("enc.3.attn.W_e", "enc.0.attn.W_s"):
            flat, a = params[name].data.reshape(-1), grads[name].reshape(-1)
            for k in np.argsort(np.abs(a))[:4]:
                keep, vals = flat[k], []
                for step in (2, 1, -1, -2):
                    flat[k] = keep + step * eps
                    vals.append(f().item())
                flat[k] = keep
                numeric = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * eps)
                assert abs(numeric - a[k]) <= 1e-4 * abs(a[k]) + 1e-13
