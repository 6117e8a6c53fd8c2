"""Token embedding, video projection, and bi-directional LSTM encoding.

The LSTM runs as one fused graph node per direction: the forward pass
iterates time steps over a packed block of sequences (all the same
length) and the backward closure replays them in reverse. Packing is
block-major: row b*steps + t is step t of sequence b, so a single
sequence is just the B=1 case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import EmptySequenceError, ShapeError, Tensor


class TokenRangeError(IndexError):
    """A token id fell outside the embedding table."""


@dataclass
class LstmDirection:
    """Fused gate parameters for one direction.

    Columns of w_ih / w_hh / b hold the four gates in i, f, g, o order,
    each d wide; the forget block of b starts at d and is initialised to 1.
    """

    w_ih: Tensor  # in_dim x 4d
    w_hh: Tensor  # d x 4d
    b: Tensor     # 4d


@dataclass
class LstmParams:
    forward: LstmDirection
    backward: LstmDirection

    @property
    def hidden_size(self) -> int:
        return self.forward.w_hh.shape[0]


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    k = 1.0 / np.sqrt(fan_in)
    return T.tensor(rng.uniform(-k, k, size=shape).astype(dtype), requires_grad=True, dtype=dtype)


def init_lstm_params(rng: np.random.Generator, in_dim: int, d: int, dtype=np.float32) -> LstmParams:
    def direction():
        w_ih = uniform_init(rng, (in_dim, 4 * d), in_dim, dtype)
        w_hh = uniform_init(rng, (d, 4 * d), d, dtype)
        b_arr = rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=4 * d).astype(dtype)
        b_arr[d:2 * d] = 1.0  # forget gate starts open
        return LstmDirection(w_ih, w_hh, T.tensor(b_arr, requires_grad=True, dtype=dtype))

    return LstmParams(direction(), direction())


def embed_tokens(token_ids, table: Tensor) -> Tensor:
    """Look rows of `table` up by id; gradients accumulate into those rows."""
    ids = np.asarray(list(token_ids), dtype=np.int64)
    vocab, dim = table.shape
    if ids.size:
        bad = ids[(ids < 0) | (ids >= vocab)]
        if bad.size:
            raise TokenRangeError(f"token id {int(bad[0])} outside table of {vocab} rows")
    out = Tensor(table.data[ids] if ids.size else np.zeros((0, dim), dtype=table.dtype),
                 _parents=(table,), _op="embed")

    def _bw(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids, g)
        table._accumulate(buf)

    out._backward = _bw
    return out


def affine_rows(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w with the bias vector added to every row (via an explicit ones column)."""
    n = x.shape[0]
    xw = T.matmul(x, w)
    rows_of_b = T.matmul(T.ones((n, 1), dtype=x.dtype), T.reshape(b, (1, b.shape[0])))
    return T.add(xw, rows_of_b)


def project_video(v: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Project dense frame features into word space: tanh(vW + b) per row."""
    if v.shape[0] < 1:
        raise EmptySequenceError("project_video: empty sequence")
    if v.shape[1] != w.shape[0]:
        raise ShapeError(f"project_video: feature dim {v.shape} does not match weights {w.shape}")
    return T.tanh(affine_rows(v, w, b))


def lstm_sequence(x: Tensor, direction: LstmDirection, steps: int, reverse: bool = False) -> Tensor:
    """One LSTM direction over packed equal-length sequences.

    x is (B*steps) x in_dim, block-major; the result keeps the layout with
    hidden states at their original time positions. Initial states are zero.
    """
    n, in_dim = x.shape
    if steps < 1:
        raise EmptySequenceError("lstm_sequence: empty sequence (steps = 0)")
    if n % steps != 0:
        raise ShapeError(f"lstm_sequence: {n} rows not divisible into sequences of {steps}")
    w_ih, w_hh, b = direction.w_ih, direction.w_hh, direction.b
    if in_dim != w_ih.shape[0]:
        raise ShapeError(f"lstm_sequence: input dim {x.shape} does not match weights {w_ih.shape}")
    bsz = n // steps
    d = w_hh.shape[0]
    dtype = x.dtype
    xv = x.data.reshape(bsz, steps, in_dim)

    order = range(steps - 1, -1, -1) if reverse else range(steps)
    h = np.zeros((bsz, d), dtype=dtype)
    c = np.zeros((bsz, d), dtype=dtype)
    hidden = np.zeros((bsz, steps, d), dtype=dtype)
    cache = []
    with np.errstate(over="ignore"):  # saturated gates round to exactly 0/1
        for t in order:
            z = xv[:, t] @ w_ih.data + h @ w_hh.data + b.data
            zi, zf, zg, zo = z[:, :d], z[:, d:2 * d], z[:, 2 * d:3 * d], z[:, 3 * d:]
            gi = 1.0 / (1.0 + np.exp(-zi))
            gf = 1.0 / (1.0 + np.exp(-zf))
            gg = np.tanh(zg)
            go = 1.0 / (1.0 + np.exp(-zo))
            c_new = gf * c + gi * gg
            tc = np.tanh(c_new)
            cache.append((t, h, c, gi, gf, gg, go, tc))
            h = go * tc
            c = c_new
            hidden[:, t] = h

    out = Tensor(hidden.reshape(n, d), _parents=(x, w_ih, w_hh, b), _op="lstm")

    def _bw(g):
        gv = g.reshape(bsz, steps, d)
        d_wih = np.zeros_like(w_ih.data)
        d_whh = np.zeros_like(w_hh.data)
        d_b = np.zeros_like(b.data)
        d_x = np.zeros_like(xv)
        dh_carry = np.zeros((bsz, d), dtype=dtype)
        dc_carry = np.zeros((bsz, d), dtype=dtype)
        for (t, h_prev, c_prev, gi, gf, gg, go, tc) in reversed(cache):
            dh = gv[:, t] + dh_carry
            dc = dc_carry + dh * go * (1.0 - tc * tc)
            dz = np.concatenate([
                dc * gg * gi * (1.0 - gi),
                dc * c_prev * gf * (1.0 - gf),
                dc * gi * (1.0 - gg * gg),
                dh * tc * go * (1.0 - go),
            ], axis=1)
            d_wih += xv[:, t].T @ dz
            d_whh += h_prev.T @ dz
            d_b += dz.sum(axis=0)
            d_x[:, t] = dz @ w_ih.data.T
            dh_carry = dz @ w_hh.data.T
            dc_carry = dc * gf
        if x.requires_grad:
            x._accumulate(d_x.reshape(n, in_dim))
        if w_ih.requires_grad:
            w_ih._accumulate(d_wih)
        if w_hh.requires_grad:
            w_hh._accumulate(d_whh)
        if b.requires_grad:
            b._accumulate(d_b)

    out._backward = _bw
    return out


def bilstm_batch(x: Tensor, params: LstmParams, steps: int) -> Tensor:
    """Bi-LSTM over packed equal-length sequences: (B*steps) x in -> (B*steps) x 2d."""
    fwd = lstm_sequence(x, params.forward, steps)
    bwd = lstm_sequence(x, params.backward, steps, reverse=True)
    return T.concat([fwd, bwd], axis=1)


def bilstm_encode(x: Tensor, params: LstmParams) -> Tensor:
    """Encode one T x in_dim sequence to T x 2d (forward;backward per step)."""
    if x.shape[0] < 1:
        raise EmptySequenceError("bilstm_encode: empty sequence (T = 0)")
    return bilstm_batch(x, params, steps=x.shape[0])
