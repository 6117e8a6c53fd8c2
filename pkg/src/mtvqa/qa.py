"""Context-query attention, fusion, two-stream scoring, answer probability.

`context_query_attention` / `fuse` / `score_stream` operate on a single
sample, matching their contracts one to one. `attention_blocks` is the
fused batched form used by the training graph: contexts and queries are
packed block-major and the whole attention runs as one graph node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import LstmParams, affine_rows, bilstm_batch
from .tensor import EmptySequenceError, ShapeError, Tensor

PROB_EPS = 1e-7  # probability clamp before logs


@dataclass
class StreamScores:
    """Per-stream raw scores, their sum, and the softmaxed probabilities
    for one sample's five candidates."""

    per_stream: list      # one (5,) tensor per active stream
    combined: Tensor      # (5,)
    answer_probs: Tensor  # (5,), sums to 1


def context_query_attention(context: Tensor, query: Tensor):
    """Dot-product context-to-query attention.

    Returns (attended, weights): weights rows are the softmaxed
    similarities (row-stochastic), attended = weights @ query, i.e. each
    context position gets a convex combination of query vectors.
    """
    if context.shape[0] < 1 or query.shape[0] < 1:
        raise EmptySequenceError("context_query_attention: empty context or query")
    if context.shape[1] != query.shape[1]:
        raise ShapeError(f"context_query_attention: widths differ: {context.shape} vs {query.shape}")
    sim = T.matmul(context, T.transpose(query))
    weights = T.softmax_rows(sim)
    attended = T.matmul(weights, query)
    return attended, weights


def attention_blocks(context: Tensor, query: Tensor, blocks: int, ctx_len: int,
                     queries_per_block: int, query_len: int) -> Tensor:
    """Batched dot-product attention over packed blocks.

    context: (blocks*ctx_len) x w, block-major. query:
    (blocks*queries_per_block*query_len) x w. Output row
    ((b*queries_per_block + r)*ctx_len + t) attends context position t of
    block b over query (b, r).
    """
    w = context.shape[1]
    cv = context.data.reshape(blocks, ctx_len, w)
    qv = query.data.reshape(blocks, queries_per_block, query_len, w)
    sim = np.einsum("btw,brmw->brtm", cv, qv)
    sim -= sim.max(axis=3, keepdims=True)
    e = np.exp(sim)
    sbar = e / e.sum(axis=3, keepdims=True)
    att = np.einsum("brtm,brmw->brtw", sbar, qv)
    out = Tensor(att.reshape(blocks * queries_per_block * ctx_len, w),
                 _parents=(context, query), _op="attention")

    def _bw(g):
        gv = g.reshape(blocks, queries_per_block, ctx_len, w)
        d_sbar = np.einsum("brtw,brmw->brtm", gv, qv)
        d_sim = sbar * (d_sbar - (d_sbar * sbar).sum(axis=3, keepdims=True))
        if context.requires_grad:
            d_ctx = np.einsum("brtm,brmw->btw", d_sim, qv)
            context._accumulate(d_ctx.reshape(blocks * ctx_len, w))
        if query.requires_grad:
            d_q = np.einsum("brtm,btw->brmw", d_sim, cv)
            d_q += np.einsum("brtm,brtw->brmw", sbar, gv)
            query._accumulate(d_q.reshape(blocks * queries_per_block * query_len, w))

    out._backward = _bw
    return out


def fuse(h: Tensor, att_q: Tensor, att_a: Tensor) -> Tensor:
    """[H; Aq; Aa; H*Aq; H*Aa] along the feature axis: n x w -> n x 5w."""
    if not (h.shape == att_q.shape == att_a.shape):
        raise ShapeError(f"fuse: shapes differ: {h.shape}, {att_q.shape}, {att_a.shape}")
    return T.concat([h, att_q, att_a, T.mul(h, att_q), T.mul(h, att_a)], axis=1)


def score_stream(fused_per_answer, lstm2: LstmParams, w_out: Tensor, b_out: Tensor) -> Tensor:
    """Per-answer raw scores for one stream.

    Each fused n x 10d matrix goes through the second bi-LSTM (hidden 5d
    per direction, so the output keeps width 10d), is max-pooled over
    time, and hits a shared linear head. Returns a (num_answers,) tensor.
    """
    mats = list(fused_per_answer)
    if any(m.shape[0] < 1 for m in mats):
        raise EmptySequenceError("score_stream: an answer's fused matrix is empty")
    n = mats[0].shape[0]
    if any(m.shape != mats[0].shape for m in mats):
        raise ShapeError("score_stream: fused matrices must share one shape")
    packed = T.concat(mats, axis=0)
    encoded = bilstm_batch(packed, lstm2, steps=n)
    pooled = T.maxpool_blocks(encoded, steps=n)          # num_answers x 10d
    scores = affine_rows(pooled, w_out, b_out)           # num_answers x 1
    return T.reshape(scores, (len(mats),))


def combine_streams(stream_scores) -> Tensor:
    """Sum per-stream raw scores, then softmax into answer probabilities.

    With one active stream this is a pass-through before the softmax.
    Accepts (k,) tensors or a batch of (B x k) tensors.
    """
    scores = list(stream_scores)
    if not scores:
        raise EmptySequenceError("combine_streams: no stream scores")
    total = scores[0]
    for s in scores[1:]:
        total = T.add(total, s)
    if total.data.ndim == 1:
        return T.reshape(T.softmax_rows(T.reshape(total, (1, total.shape[0]))), (total.shape[0],))
    return T.softmax_rows(total)


def combine_stream_scores(stream_scores) -> StreamScores:
    """Single-sample combination keeping the intermediate pieces."""
    scores = list(stream_scores)
    if not scores:
        raise EmptySequenceError("combine_stream_scores: no stream scores")
    total = scores[0]
    for s in scores[1:]:
        total = T.add(total, s)
    return StreamScores(per_stream=scores, combined=total, answer_probs=combine_streams(scores))


def qa_loss(answer_probs: Tensor, correct_index, loss_form: str = "summed_bce") -> Tensor:
    """Answer-classification loss over softmax outputs.

    summed_bce: binary cross-entropy summed over the five probabilities,
    i.e. -sum_i [y_i log p_i + (1-y_i) log(1-p_i)], with probabilities
    clamped to [eps, 1-eps] before the logs. categorical: -log p_correct.
    Batched input (B x 5 probs, sequence of indices) returns the mean.
    """
    p = answer_probs
    batched = p.data.ndim == 2
    if not batched:
        p = T.reshape(p, (1, p.shape[0]))
        correct_index = [correct_index]
    rows, k = p.shape
    y = np.zeros((rows, k), dtype=p.dtype)
    y[np.arange(rows), np.asarray(correct_index, dtype=np.int64)] = 1.0
    y_t = T.tensor(y, dtype=p.dtype)
    p = T.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    if loss_form == "categorical":
        per_entry = T.mul(y_t, T.log(p))
    elif loss_form == "summed_bce":
        ones = T.ones((rows, k), dtype=p.dtype)
        pos = T.mul(y_t, T.log(p))
        neg = T.mul(T.sub(ones, y_t), T.log(T.sub(ones, p)))
        per_entry = T.add(pos, neg)
    else:
        raise ValueError(f"unknown loss_form {loss_form!r}")
    return T.scale(T.sum_all(per_entry), -1.0 / rows)
