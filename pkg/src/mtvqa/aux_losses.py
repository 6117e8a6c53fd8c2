"""Auxiliary supervision: modality alignment and temporal localization.

The float-level functions (`overlap_length`, `temporal_localization_loss`)
are the reference semantics; `alignment_loss_matrix` and
`temporal_loss_batch` are the differentiable batched forms the training
graph uses, built from engine ops so gradients come out of the tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import EmptySequenceError, ShapeError, Tensor


class BatchSizeError(ValueError):
    """In-batch negatives need at least two episodes."""


@dataclass(frozen=True)
class TimeSpan:
    """Normalized [0,1] span. Ground truth must satisfy start < end;
    predictions only promise per-coordinate bounds."""

    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start <= 1.0 and 0.0 <= self.end <= 1.0):
            raise ValueError(f"span coordinates outside [0,1]: ({self.start}, {self.end})")

    def require_ground_truth(self) -> "TimeSpan":
        if not self.start < self.end:
            raise ValueError(f"degenerate ground-truth span ({self.start}, {self.end})")
        return self

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass
class AlignmentBatch:
    """Index i of both lists is the positive video/subtitle pairing."""

    video: list      # B tensors of shape (2d,)
    subtitle: list   # B tensors of shape (2d,)

    def __post_init__(self):
        if len(self.video) != len(self.subtitle):
            raise BatchSizeError(f"pair count mismatch: {len(self.video)} vs {len(self.subtitle)}")
        if len(self.video) < 2:
            raise BatchSizeError(f"alignment needs B >= 2, got B = {len(self.video)}")


def pool_for_alignment(h: Tensor) -> Tensor:
    """Reduce a T x 2d encoded sequence to a fixed 2d vector by time max-pool."""
    if h.shape[0] < 1:
        raise EmptySequenceError("pool_for_alignment: empty sequence")
    return T.maxpool_time(h)


def pairwise_l2(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs Euclidean distances: (B x d, B x d) -> B x B.

    Computed from explicit differences (no dot-product expansion, so no
    cancellation); gradient at a zero distance is defined as zero.
    """
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_l2: widths differ: {a.shape} vs {b.shape}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    T._record_decision("pairwise_l2", dist > 0)
    out = Tensor(dist, _parents=(a, b), _op="pairwise_l2")

    def _bw(g):
        safe = np.where(dist > 0, dist, 1.0)
        w = np.where(dist > 0, g / safe, 0.0)
        contrib = w[:, :, None] * diff
        if a.requires_grad:
            a._accumulate(contrib.sum(axis=1))
        if b.requires_grad:
            b._accumulate(-contrib.sum(axis=0))

    out._backward = _bw
    return out


def row_sums(x: Tensor) -> Tensor:
    """n x m -> n x 1 by multiplying with a ones column."""
    return T.matmul(x, T.ones((x.shape[1], 1), dtype=x.dtype))


def alignment_loss_matrix(video: Tensor, subtitle: Tensor, margin: float) -> Tensor:
    """Max-margin alignment loss over stacked pooled vectors (B x 2d each).

    Per anchor i: hinge(margin - d(i, j) + d(i, i)) averaged over the B-1
    negatives j != i, then averaged over anchors.
    """
    bsz = video.shape[0]
    if subtitle.shape != video.shape:
        raise ShapeError(f"alignment: shapes differ: {video.shape} vs {subtitle.shape}")
    if bsz < 2:
        raise BatchSizeError(f"alignment needs B >= 2, got B = {bsz}")
    diff = T.sub(video, subtitle)
    pos = T.sqrt(row_sums(T.mul(diff, diff)))                      # B x 1
    pos_cols = T.matmul(pos, T.ones((1, bsz), dtype=video.dtype))  # broadcast across negatives
    neg = pairwise_l2(video, subtitle)                             # B x B
    margin_mat = T.scale(T.ones((bsz, bsz), dtype=video.dtype), margin)
    hinge = T.relu(T.add(margin_mat, T.sub(pos_cols, neg)))
    off_diag = T.tensor(1.0 - np.eye(bsz), dtype=video.dtype)
    per_anchor = row_sums(T.mul(hinge, off_diag))                  # B x 1
    return T.scale(T.sum_all(per_anchor), 1.0 / (bsz * (bsz - 1)))


def modality_alignment_loss(batch: AlignmentBatch, margin: float) -> Tensor:
    """Contract form over per-episode pooled vectors."""
    video = T.concat([T.reshape(v, (1, v.shape[0])) for v in batch.video], axis=0)
    subtitle = T.concat([T.reshape(s, (1, s.shape[0])) for s in batch.subtitle], axis=0)
    return alignment_loss_matrix(video, subtitle, margin)


def predict_span(u_all: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Regress (start, end) from concatenated final feature vectors.

    u_all is the 5*10d concatenation for one sample (or a B x 50d batch,
    streams already averaged); the two logits are squashed by the
    logistic function so each coordinate lands in [0,1].
    """
    single = u_all.data.ndim == 1
    mat = T.reshape(u_all, (1, u_all.shape[0])) if single else u_all
    if mat.shape[1] != w.shape[0]:
        raise ShapeError(f"predict_span: feature width {mat.shape} does not match weights {w.shape}")
    from .encoders import affine_rows

    out = T.sigmoid(affine_rows(mat, w, b))
    return T.reshape(out, (2,)) if single else out


def overlap_length(a: TimeSpan, b: TimeSpan) -> float:
    """Length of the interval intersection (standard form, symmetric)."""
    return max(0.0, min(a.end, b.end) - max(a.start, b.start))


def temporal_localization_loss(gt: TimeSpan, pred: TimeSpan, reg_form: str = "norm") -> float:
    """Regression-minus-overlap loss for one span pair (reference semantics)."""
    gt.require_ground_truth()
    sq = (gt.start - pred.start) ** 2 + (gt.end - pred.end) ** 2
    reg = sq if reg_form == "squared" else math.sqrt(sq)
    return reg - overlap_length(gt, pred) / gt.length


def temporal_loss_batch(pred: Tensor, gt: np.ndarray, reg_form: str = "norm") -> Tensor:
    """Differentiable batch mean of the span loss.

    pred: B x 2 tensor of squashed predictions; gt: B x 2 array of valid
    ground-truth spans. min/max enter the graph as relu compositions, so
    their subgradients are deterministic.
    """
    gt = np.asarray(gt, dtype=pred.dtype)
    if gt.shape != pred.shape:
        raise ShapeError(f"temporal_loss_batch: shapes differ: {gt.shape} vs {pred.shape}")
    if np.any(gt[:, 1] <= gt[:, 0]):
        raise ValueError("temporal_loss_batch: degenerate ground-truth span")
    bsz = pred.shape[0]
    gt_t = T.tensor(gt, dtype=pred.dtype)

    diff = T.sub(pred, gt_t)
    sq = row_sums(T.mul(diff, diff))
    reg = sq if reg_form == "squared" else T.sqrt(sq)              # B x 1

    ps, pe = T.narrow(pred, 1, 0, 1), T.narrow(pred, 1, 1, 1)
    gs = T.tensor(gt[:, :1], dtype=pred.dtype)
    ge = T.tensor(gt[:, 1:], dtype=pred.dtype)
    min_end = T.sub(pe, T.relu(T.sub(pe, ge)))                     # min(pe, ge)
    max_start = T.add(ps, T.relu(T.sub(gs, ps)))                   # max(ps, gs)
    overlap = T.relu(T.sub(min_end, max_start))
    inv_len = T.tensor(1.0 / (gt[:, 1:] - gt[:, :1]), dtype=pred.dtype)
    loss_per_sample = T.sub(reg, T.mul(overlap, inv_len))
    return T.scale(T.sum_all(loss_per_sample), 1.0 / bsz)
