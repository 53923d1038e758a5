"""LSTM cell, vanilla/bidirectional sequence encoders, and the binary head.

Gate weights act on the concatenation [h_prev, x_t] in that order, so each
weight matrix is [hidden x (hidden + input)].  The cell computes

    f = sigmoid(W_f [h, x] + b_f)        i = sigmoid(W_i [h, x] + b_i)
    c~ = tanh(W_c [h, x] + b_c)          c' = f * c_prev + i * c~
    o = sigmoid(W_o [h, x] + b_o)        h' = o * tanh(c')
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, InputError
from .tensor import Tensor


@dataclass(frozen=True)
class BiLstmConfig:
    input_width: int = 273
    hidden_width: int = 256
    dropout: float = 0.5
    bidirectional: bool = True

    def __post_init__(self):
        if self.input_width < 1 or self.hidden_width < 1:
            raise ConfigurationError(
                f"widths must be >= 1, got I={self.input_width} H={self.hidden_width}"
            )


@dataclass
class LstmCellParams:
    """The four gate weight matrices and bias vectors of one LSTM cell."""

    w_f: Tensor
    w_i: Tensor
    w_c: Tensor
    w_o: Tensor
    b_f: Tensor
    b_i: Tensor
    b_c: Tensor
    b_o: Tensor

    @classmethod
    def init(cls, input_width: int, hidden_width: int,
             rng: np.random.Generator) -> "LstmCellParams":
        """Gaussian(0, 0.1) weights, +1 forget-gate bias, zero other biases."""
        cols = hidden_width + input_width

        def w():
            return Tensor(rng.normal(0.0, 0.1, (hidden_width, cols)), requires_grad=True)

        def b(value=0.0):
            return Tensor(np.full(hidden_width, value), requires_grad=True)

        return cls(w(), w(), w(), w(), b(1.0), b(), b(), b())

    @classmethod
    def zeros(cls, input_width: int, hidden_width: int) -> "LstmCellParams":
        cols = hidden_width + input_width
        mk = lambda shape: Tensor(np.zeros(shape), requires_grad=True)
        return cls(*(mk((hidden_width, cols)) for _ in range(4)),
                   *(mk(hidden_width) for _ in range(4)))

    @property
    def hidden_width(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_width(self) -> int:
        return self.w_f.shape[1] - self.w_f.shape[0]

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {f"{prefix}{k}": getattr(self, k)
                for k in ("w_f", "w_i", "w_c", "w_o", "b_f", "b_i", "b_c", "b_o")}


def _step2d(x: Tensor, h_prev: Tensor, c_prev: Tensor,
            p: LstmCellParams) -> tuple[Tensor, Tensor]:
    z = T.concat([h_prev, x], axis=1)
    f = T.sigmoid(T.linear(z, p.w_f, p.b_f))
    i = T.sigmoid(T.linear(z, p.w_i, p.b_i))
    c_cand = T.tanh(T.linear(z, p.w_c, p.b_c))
    c_t = f * c_prev + i * c_cand
    o = T.sigmoid(T.linear(z, p.w_o, p.b_o))
    h_t = o * T.tanh(c_t)
    return h_t, c_t


def lstm_cell_step(x_t, h_prev, c_prev, p: LstmCellParams) -> tuple[Tensor, Tensor]:
    """One cell update; accepts [I]/[H] vectors or [B,I]/[B,H] batches."""
    x_t, h_prev, c_prev = (v if isinstance(v, Tensor) else Tensor(v)
                           for v in (x_t, h_prev, c_prev))
    h, inp = p.hidden_width, p.input_width
    vector_in = x_t.ndim == 1
    if vector_in:
        x_t, h_prev, c_prev = (T.reshape(v, (1, -1)) for v in (x_t, h_prev, c_prev))
    if x_t.shape[1] != inp or h_prev.shape[1] != h or c_prev.shape[1] != h:
        raise DimensionError(
            f"cell expects x[...,{inp}], h[...,{h}], c[...,{h}]; got"
            f" {x_t.shape}, {h_prev.shape}, {c_prev.shape}"
        )
    h_t, c_t = _step2d(x_t, h_prev, c_prev, p)
    if vector_in:
        return T.reshape(h_t, (-1,)), T.reshape(c_t, (-1,))
    return h_t, c_t


def _zero_state(batch: int, hidden: int) -> tuple[Tensor, Tensor]:
    return Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden)))


def _mean_tensors(items: list[Tensor]) -> Tensor:
    total = items[0]
    for t in items[1:]:
        total = total + t
    return total * (1.0 / len(items))


def lstm_forward(seq, p: LstmCellParams, h0=None, c0=None) -> Tensor:
    """Left-to-right scan over a [T,I] sequence; returns all hidden states [T,H]."""
    seq = seq if isinstance(seq, Tensor) else Tensor(seq)
    if seq.ndim != 2:
        raise DimensionError(f"sequence must be [T,I], got {seq.shape}")
    if seq.shape[0] < 1:
        raise InputError("empty sequence")
    h, c = _zero_state(1, p.hidden_width)
    if h0 is not None:
        h = T.reshape(h0 if isinstance(h0, Tensor) else Tensor(h0), (1, -1))
    if c0 is not None:
        c = T.reshape(c0 if isinstance(c0, Tensor) else Tensor(c0), (1, -1))
    rows = []
    for t in range(seq.shape[0]):
        h, c = _step2d(seq[t : t + 1], h, c, p)
        rows.append(h)
    return T.concat(rows, axis=0)


def bilstm_forward(seq, fwd: LstmCellParams, bwd: LstmCellParams) -> Tensor:
    """Per-timestep [h_fwd ; h_bwd] concatenation, [T, 2H].

    The backward stream processes the reversed sequence and is re-reversed,
    so row t holds the forward state after steps 0..t and the backward state
    after steps T-1..t.
    """
    seq = seq if isinstance(seq, Tensor) else Tensor(seq)
    h_f = lstm_forward(seq, fwd)
    h_b = lstm_forward(seq[::-1], bwd)[::-1]
    return T.concat([h_f, h_b], axis=1)


class PredictorHead:
    """Dropout over the readout state, then a dense layer to the logit(s)."""

    def __init__(self, in_width: int, rng: np.random.Generator,
                 mode: str = "sigmoid"):
        if mode not in ("sigmoid", "softmax"):
            raise ConfigurationError(f"unknown head mode {mode!r}")
        out = 1 if mode == "sigmoid" else 2
        self.mode = mode
        self.weight = Tensor(rng.normal(0.0, 0.1, (out, in_width)), requires_grad=True)
        self.bias = Tensor(np.zeros(out), requires_grad=True)

    def named(self, prefix: str = "head.") -> dict[str, Tensor]:
        return {f"{prefix}weight": self.weight, f"{prefix}bias": self.bias}


def readout_state(bilstm_out: Tensor, hidden_width: int, bidirectional: bool,
                  pooling: str = "final") -> Tensor:
    """Readout from the encoder output: deepest state of each direction.

    "final" takes the forward state at the last step and, when bidirectional,
    the backward state at the first step (each direction's deepest state);
    "mean" averages the concatenated stream over time.
    """
    if pooling == "mean":
        return T.reshape(bilstm_out.mean(axis=0), (1, -1))
    if pooling != "final":
        raise ConfigurationError(f"unknown pooling {pooling!r}")
    last = bilstm_out.shape[0] - 1
    if not bidirectional:
        return bilstm_out[last : last + 1]
    fwd_final = bilstm_out[last : last + 1, :hidden_width]
    bwd_final = bilstm_out[0:1, hidden_width:]
    return T.concat([fwd_final, bwd_final], axis=1)


def predictor_head(bilstm_out, head: PredictorHead, dropout_rate: float,
                   training: bool, rng=0, hidden_width: int | None = None,
                   bidirectional: bool = True, pooling: str = "final") -> Tensor:
    """Logit(s) for one sequence from its encoder output [T, 2H] (or [T, H])."""
    bilstm_out = bilstm_out if isinstance(bilstm_out, Tensor) else Tensor(bilstm_out)
    if bilstm_out.shape[0] < 1:
        raise InputError("empty encoder output")
    if hidden_width is None:
        hidden_width = bilstm_out.shape[1] // (2 if bidirectional else 1)
    state = readout_state(bilstm_out, hidden_width, bidirectional, pooling)
    dropped = T.dropout(state, dropout_rate, training, rng)
    return T.reshape(T.linear(dropped, head.weight, head.bias), (-1,))


class SequenceClassifier:
    """(Bi)LSTM encoder plus head, with a batched training-time forward."""

    def __init__(self, cfg: BiLstmConfig, seed: int = 0, head_mode: str = "sigmoid",
                 pooling: str = "final"):
        self.cfg = cfg
        self.pooling = pooling
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.fwd = LstmCellParams.init(cfg.input_width, cfg.hidden_width, rng)
        self.bwd = (LstmCellParams.init(cfg.input_width, cfg.hidden_width, rng)
                    if cfg.bidirectional else None)
        readout = cfg.hidden_width * (2 if cfg.bidirectional else 1)
        self.head = PredictorHead(readout, rng, mode=head_mode)

    def named_parameters(self) -> dict[str, Tensor]:
        params = self.fwd.named("fwd.")
        if self.bwd is not None:
            params.update(self.bwd.named("bwd."))
        params.update(self.head.named())
        return params

    def _scan(self, steps: list[Tensor], p: LstmCellParams) -> tuple[Tensor, list[Tensor]]:
        h, c = _zero_state(steps[0].shape[0], self.cfg.hidden_width)
        outs = []
        for x_t in steps:
            h, c = _step2d(x_t, h, c, p)
            outs.append(h)
        return h, outs

    def forward_batch(self, batch: np.ndarray, training: bool = False,
                      rng=0) -> Tensor:
        """Logits [B, n_out] for a [B, T, I] feature batch."""
        _, t, _ = batch.shape
        steps = [Tensor(np.ascontiguousarray(batch[:, j, :])) for j in range(t)]
        hf_final, hf_all = self._scan(steps, self.fwd)
        hb_final = hb_all = None
        if self.bwd is not None:
            hb_final, hb_all = self._scan(steps[::-1], self.bwd)
        if self.pooling == "mean":
            fwd_part = _mean_tensors(hf_all)
            state = (T.concat([fwd_part, _mean_tensors(hb_all)], axis=1)
                     if hb_all is not None else fwd_part)
        else:
            state = (T.concat([hf_final, hb_final], axis=1)
                     if hb_final is not None else hf_final)
        dropped = T.dropout(state, self.cfg.dropout, training, rng)
        return T.linear(dropped, self.head.weight, self.head.bias)

    def forward_sequence(self, seq, training: bool = False, rng=0) -> Tensor:
        """Spec-shaped path: encoder output for one [T, I] sequence, then head."""
        if self.bwd is not None:
            enc = bilstm_forward(seq, self.fwd, self.bwd)
        else:
            enc = lstm_forward(seq, self.fwd)
        return predictor_head(enc, self.head, self.cfg.dropout, training, rng,
                              hidden_width=self.cfg.hidden_width,
                              bidirectional=self.bwd is not None,
                              pooling=self.pooling)

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        """P(positive class) per row of a [B, T, I] batch, inference mode."""
        logits = self.forward_batch(batch, training=False)
        if self.head.mode == "sigmoid":
            return T.sigmoid(logits).data[:, 0]
        return T.softmax(logits, axis=1).data[:, 1]


def count_recurrent_params(cfg: BiLstmConfig, include_head: bool = False,
                           head_outputs: int = 1) -> int:
    """Closed-form parameter count: 4*(H*(H+I)+H) per direction."""
    h, i = cfg.hidden_width, cfg.input_width
    per_direction = 4 * (h * (h + i) + h)
    total = per_direction * (2 if cfg.bidirectional else 1)
    if include_head:
        readout = h * (2 if cfg.bidirectional else 1)
        total += head_outputs * (readout + 1)
    return total
