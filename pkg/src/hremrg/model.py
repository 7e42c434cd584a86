"""Encoder-decoder report generator.

Region features are embedded, refined by the stacked m-linear encoder and
fused into one conditioning vector.  An LSTM decoder queries the refined
region values with its own m-linear attention block and emits next-token
log-probabilities through a GLU context head.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .attention import attention_block, encode_stack, encoder_depth, init_attention_params, init_encoder_params
from .errors import ContractError, SequenceLengthError, ShapeError, VocabularyError
from .vocab import BOS


@dataclass
class FeatureBundle:
    regional: np.ndarray
    global_: np.ndarray = field(default=None)

    def __post_init__(self):
        self.regional = np.atleast_2d(np.asarray(self.regional, dtype=np.float64))
        if self.regional.shape[0] < 1:
            raise ShapeError("a feature bundle needs at least one region")
        if self.global_ is None:
            self.global_ = self.regional.mean(axis=0)
        else:
            self.global_ = np.asarray(self.global_, dtype=np.float64)

    @property
    def n_regions(self):
        return self.regional.shape[0]

    @property
    def width(self):
        return self.regional.shape[1]


@dataclass
class ModelConfig:
    vocab_size: int
    d_raw: int = 4096
    d_model: int = 1024
    depth: int = 4
    max_len: int = 114
    beam: int = 2
    d_bilinear: int | None = None

    def __post_init__(self):
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if self.beam < 1:
            raise ValueError("beam must be at least 1")
        if self.depth < 1:
            raise ValueError("depth must be at least 1")


class DecoderState(NamedTuple):
    h: T.Tensor
    c: T.Tensor
    last_tokens: tuple = ()


class Encoded(NamedTuple):
    fused: T.Tensor
    memory: T.Tensor


class ReportModel:
    """Holds the parameter dict; every forward pass is a pure function of it."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    # ------------------------------------------------------------ construction

    @classmethod
    def initialize(cls, config, seed=0):
        rng = np.random.default_rng(seed)
        d, v = config.d_model, config.vocab_size
        p = {}

        def mat(name, rows, cols):
            p[name] = T.parameter(T.xavier(rng, rows, cols), name)

        def vec(name, width, value=0.0):
            p[name] = T.parameter(np.full(width, value), name)

        mat("embed.W", d, config.d_raw)
        p.update(init_encoder_params(rng, d, config.depth, config.d_bilinear))
        mat("fuse.W", d, (config.depth + 1) * d)
        vec("fuse.b", d)
        mat("dec.embed", v, d)
        mat("dec.lstm.W_ih", 4 * d, 2 * d)
        mat("dec.lstm.W_hh", 4 * d, d)
        vec("dec.lstm.b", 4 * d)
        p.update(init_attention_params(rng, d, config.d_bilinear, "dec.attn."))
        mat("dec.L.W", d, d)
        vec("dec.L.b", d)
        mat("dec.glu.Wa", d, d)
        mat("dec.glu.Wb", d, d)
        vec("dec.glu.ba", d)
        vec("dec.glu.bb", d)
        mat("dec.ctx.W", d, d)
        vec("dec.ctx.b", d)
        mat("dec.out.W", v, d)
        vec("dec.out.b", v)
        return cls(config, p)

    @classmethod
    def from_arrays(cls, arrays, max_len=114, beam=2):
        """Rebuild a model from checkpoint arrays, inferring the widths."""
        try:
            d_model, d_raw = arrays["embed.W"].shape
            vocab_size = arrays["dec.out.W"].shape[0]
            d_b = arrays["dec.attn.W_k"].shape[0]
        except KeyError as exc:
            raise ContractError(f"checkpoint lacks parameter {exc}") from None
        depth = encoder_depth(arrays)
        config = ModelConfig(
            vocab_size=vocab_size, d_raw=d_raw, d_model=d_model, depth=depth,
            max_len=max_len, beam=beam, d_bilinear=None if d_b == d_model else d_b,
        )
        params = {name: T.parameter(np.array(a, dtype=np.float64), name) for name, a in arrays.items()}
        return cls(config, params)

    def arrays(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def copy(self):
        return ReportModel(self.config, {n: T.parameter(p.data.copy(), n) for n, p in self.params.items()})

    # ------------------------------------------------------------ forward

    def embed_features(self, bundle):
        if bundle.width != self.config.d_raw:
            raise ShapeError(f"feature width {bundle.width} != d_raw {self.config.d_raw}")
        W = self.params["embed.W"]
        return T.linear(T.Tensor(bundle.regional), W), T.linear(T.Tensor(bundle.global_), W)

    def encode(self, bundle):
        regional, global_ = self.embed_features(bundle)
        attended, _, values = encode_stack(regional, global_, self.params, self.config.depth)
        stacked = T.concat([global_, *attended])
        fused = T.linear(stacked, self.params["fuse.W"], self.params["fuse.b"])
        return Encoded(fused, values)

    def initial_state(self):
        zeros = np.zeros(self.config.d_model)
        return DecoderState(T.Tensor(zeros), T.Tensor(zeros.copy()), ())

    def decoder_step(self, fused, token, state, memory):
        """Next-token log-probabilities after feeding ``token``."""
        p = self.params
        if not 0 <= token < self.config.vocab_size:
            raise VocabularyError(f"token id {token} outside vocabulary of size {self.config.vocab_size}")
        x = T.concat([T.pick(p["dec.embed"], token), fused])
        h, c = T.lstm_cell(x, state.h, state.c, p["dec.lstm.W_ih"], p["dec.lstm.W_hh"], p["dec.lstm.b"])
        attended = attention_block(memory, memory, h, p, "dec.attn.")
        inner = T.add(h, T.linear(T.add(h, attended), p["dec.L.W"], p["dec.L.b"]))
        gated = T.glu(inner, p["dec.glu.Wa"], p["dec.glu.Wb"], p["dec.glu.ba"], p["dec.glu.bb"])
        context = T.linear(gated, p["dec.ctx.W"], p["dec.ctx.b"])
        log_probs = T.log_softmax(T.linear(context, p["dec.out.W"], p["dec.out.b"]))
        return log_probs, DecoderState(h, c, (*state.last_tokens, token)[-2:])

    def sequence_logprob(self, bundle, tokens, per_token=False):
        """Teacher-forced log-probability of ``tokens[1:]`` given ``tokens[:-1]``.

        ``tokens`` must start with BOS.  With ``per_token`` the step terms are
        returned as a list instead of summed.
        """
        tokens = list(tokens)
        if len(tokens) < 2 or tokens[0] != BOS:
            raise ContractError("sequence must start with BOS and contain a next token")
        if len(tokens) > self.config.max_len:
            raise SequenceLengthError(f"sequence length {len(tokens)} exceeds max_len {self.config.max_len}")
        enc = self.encode(bundle)
        state = self.initial_state()
        terms = []
        for cur, nxt in zip(tokens[:-1], tokens[1:]):
            log_probs, state = self.decoder_step(enc.fused, cur, state, enc.memory)
            terms.append(T.pick(log_probs, nxt))
        if per_token:
            return terms
        out = terms[0]
        for t in terms[1:]:
            out = T.add(out, t)
        return out

    # ------------------------------------------------------------ decoding protocol

    def start(self, bundle):
        with T.no_grad():
            return self.encode(bundle), self.initial_state()

    def step(self, context, token, state):
        with T.no_grad():
            log_probs, state = self.decoder_step(context.fused, token, state, context.memory)
        return log_probs.data, state
