"""M-linear attention: bilinear pooling with a spatial softmax branch and a
squeeze-excitation channel gate, plus the stacked encoder that refines the
region keys and values after every block."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import EmptyRegionError, ShapeError

# weight name -> (rows, cols) as a function of (d_model, d_bilinear)
_BLOCK_SHAPES = {
    "W_k": lambda d, b: (b, d),
    "W_v": lambda d, b: (b, d),
    "W_qk": lambda d, b: (b, d),
    "W_qv": lambda d, b: (b, d),
    "W_mk": lambda d, b: (b, b),
    "W_s": lambda d, b: (1, b),
    "W_e": lambda d, b: (b, b),
    "W_c": lambda d, b: (b, b),
    "W_o": lambda d, b: (d, 2 * b),
}
_BLOCK_BIASES = ("b_k", "b_v", "b_qk", "b_qv", "b_mk", "b_e", "b_o")


def init_attention_params(rng, d_model, d_bilinear=None, prefix=""):
    """Fresh parameter dict for one block; keys are ``prefix + name``."""
    d_b = d_model if d_bilinear is None else d_bilinear
    params = {}
    for name, shape_of in _BLOCK_SHAPES.items():
        rows, cols = shape_of(d_model, d_b)
        params[prefix + name] = T.parameter(T.xavier(rng, rows, cols), prefix + name)
    for name in _BLOCK_BIASES:
        width = d_model if name == "b_o" else d_b
        params[prefix + name] = T.parameter(np.zeros(width), prefix + name)
    return params


def _view(params, prefix):
    return {name: params[prefix + name] for name in (*_BLOCK_SHAPES, *_BLOCK_BIASES)}


def bilinear_pool(Q, K, V, params, prefix=""):
    """Query-key and query-value joint representations for every region.

    Returns ``(M_k, M_v)``, each ``N x d_b``: ``ELU(W_k k_i) * ELU(W_qk Q)``
    and ``ELU(W_v v_i) * ELU(W_qv Q)``.
    """
    p = _view(params, prefix)
    if K.shape[-1] != p["W_k"].shape[1] or V.shape[-1] != p["W_v"].shape[1]:
        raise ShapeError(f"bilinear_pool: keys {K.shape} / values {V.shape} vs W_k {p['W_k'].shape}")
    if Q.shape[-1] != p["W_qk"].shape[1]:
        raise ShapeError(f"bilinear_pool: query {Q.shape} vs W_qk {p['W_qk'].shape}")
    qk = T.elu(T.linear(Q, p["W_qk"], p["b_qk"]))
    qv = T.elu(T.linear(Q, p["W_qv"], p["b_qv"]))
    m_k = T.mul(T.elu(T.linear(K, p["W_k"], p["b_k"])), qk)
    m_v = T.mul(T.elu(T.linear(V, p["W_v"], p["b_v"])), qv)
    return m_k, m_v


class AttentionOutput(NamedTuple):
    attended: T.Tensor
    spatial: np.ndarray
    channel: np.ndarray


def attention_block(K, V, Q, params, prefix="", return_weights=False):
    """Attend ``N x d`` keys/values with query ``Q``; returns a ``d`` vector.

    The channel gate multiplies the region mean of the query-value features
    and the spatial softmax weights their sum; the two pooled vectors are
    concatenated and projected back to the model width.
    """
    if K.shape[0] == 0 or V.shape[0] == 0:
        raise EmptyRegionError("attention needs at least one region")
    if K.shape[0] != V.shape[0]:
        raise ShapeError(f"keys {K.shape} and values {V.shape} disagree on region count")
    p = _view(params, prefix)
    m_k, m_v = bilinear_pool(Q, K, V, params, prefix)
    m_k2 = T.relu(T.linear(m_k, p["W_mk"], p["b_mk"]))
    spatial = T.softmax(T.reshape(T.linear(m_k2, p["W_s"]), (K.shape[0],)))
    squeezed = T.mean(m_k2, axis=0)
    channel = T.sigmoid(T.linear(squeezed, p["W_e"], p["b_e"]))
    channel_branch = T.linear(T.mul(channel, T.mean(m_v, axis=0)), p["W_c"])
    spatial_branch = T.vecmat(spatial, m_v)
    out = T.linear(T.concat([channel_branch, spatial_branch]), p["W_o"], p["b_o"])
    if return_weights:
        return AttentionOutput(out, spatial.data.copy(), channel.data.copy())
    return out


def init_encoder_params(rng, d_model, depth=4, d_bilinear=None, prefix="enc."):
    params = {}
    for n in range(depth):
        layer = f"{prefix}{n}."
        params.update(init_attention_params(rng, d_model, d_bilinear, layer + "attn."))
        for side in ("k", "v"):
            params[f"{layer}W_{side}"] = T.parameter(T.xavier(rng, d_model, 2 * d_model), f"{layer}W_{side}")
            params[f"{layer}b_{side}"] = T.parameter(np.zeros(d_model), f"{layer}b_{side}")
            params[f"{layer}ln_{side}.g"] = T.parameter(np.ones(d_model), f"{layer}ln_{side}.g")
            params[f"{layer}ln_{side}.b"] = T.parameter(np.zeros(d_model), f"{layer}ln_{side}.b")
    return params


def encoder_depth(params, prefix="enc."):
    depth = 0
    while f"{prefix}{depth}.attn.W_k" in params:
        depth += 1
    return depth


def _refine(f_hat, X, params, layer, side):
    joined = T.concat([T.broadcast_rows(f_hat, X.shape[0]), X], axis=1)
    update = T.relu(T.linear(joined, params[f"{layer}W_{side}"], params[f"{layer}b_{side}"]))
    return T.layer_norm(T.add(update, X), params[f"{layer}ln_{side}.g"], params[f"{layer}ln_{side}.b"])


def encode_stack(f_regional, f_global, params, depth=None, prefix="enc."):
    """Run ``depth`` attention blocks, refining keys and values after each.

    Returns ``(attended, K_final, V_final)`` where ``attended`` lists the
    block outputs in order (the global feature itself is not included).
    """
    available = encoder_depth(params, prefix)
    depth = available if depth is None else depth
    if depth < 1:
        raise ValueError("encoder depth must be at least 1")
    if depth > available:
        raise ValueError(f"requested depth {depth} but only {available} layers are initialised")
    K = V = f_regional
    query = f_global
    attended = []
    for n in range(depth):
        layer = f"{prefix}{n}."
        query = attention_block(K, V, query, params, layer + "attn.")
        attended.append(query)
        K = _refine(query, K, params, layer, "k")
        V = _refine(query, V, params, layer, "v")
    return attended, K, V
