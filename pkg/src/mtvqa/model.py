"""Full network: parameter set, batched forward pass, task losses.

Stream layout inside a batch is block-major everywhere: context rows are
(b*T + t), per-answer rows are ((b*5 + i)*m + t), and the five final
feature vectors of a sample sit in consecutive rows, so reshaping
(5B x 10d) to (B x 50d) is exactly the per-sample concatenation the span
head wants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aux_losses as aux
from . import qa as qa_head
from . import tensor as T
from .config import ModelConfig, RunConfig
from .data import PAD, EpisodeSample
from .encoders import (LstmParams, affine_rows, bilstm_batch, embed_tokens,
                       init_lstm_params, project_video, uniform_init)
from .tensor import Tensor

STREAM_KIND = {"subtitle": "subtitle", "video-cpt": "video", "video-img": "video"}


@dataclass
class ModelParams:
    embed: Tensor
    video_w: Tensor
    video_b: Tensor
    text_lstm: LstmParams
    video_lstm: LstmParams
    lstm2_subtitle: LstmParams
    lstm2_video: LstmParams
    score_w_subtitle: Tensor
    score_b_subtitle: Tensor
    score_w_video: Tensor
    score_b_video: Tensor
    span_w: Tensor
    span_b: Tensor

    def lstm2(self, kind: str) -> LstmParams:
        return self.lstm2_subtitle if kind == "subtitle" else self.lstm2_video

    def score_head(self, kind: str):
        if kind == "subtitle":
            return self.score_w_subtitle, self.score_b_subtitle
        return self.score_w_video, self.score_b_video


def _lstm_named(prefix: str, params: LstmParams):
    for tag, d in (("fwd", params.forward), ("bwd", params.backward)):
        yield f"{prefix}.{tag}.w_ih", d.w_ih
        yield f"{prefix}.{tag}.w_hh", d.w_hh
        yield f"{prefix}.{tag}.b", d.b


def named_parameters(p: ModelParams) -> list:
    """Stable (name, tensor) listing; checkpoint and optimizer order."""
    out = [("embed", p.embed), ("video_proj.w", p.video_w), ("video_proj.b", p.video_b)]
    out += list(_lstm_named("text_lstm", p.text_lstm))
    out += list(_lstm_named("video_lstm", p.video_lstm))
    out += list(_lstm_named("lstm2.subtitle", p.lstm2_subtitle))
    out += list(_lstm_named("lstm2.video", p.lstm2_video))
    out += [("score.subtitle.w", p.score_w_subtitle), ("score.subtitle.b", p.score_b_subtitle),
            ("score.video.w", p.score_w_video), ("score.video.b", p.score_b_video),
            ("span.w", p.span_w), ("span.b", p.span_b)]
    return out


def init_model(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    d = cfg.hidden_size
    e = cfg.embed_dim
    d10 = 10 * d
    h2 = cfg.second_lstm_hidden
    return ModelParams(
        embed=uniform_init(rng, (cfg.vocab_size, e), e, dtype),
        video_w=uniform_init(rng, (cfg.video_feat_dim, e), cfg.video_feat_dim, dtype),
        video_b=uniform_init(rng, (e,), cfg.video_feat_dim, dtype),
        text_lstm=init_lstm_params(rng, e, d, dtype),
        video_lstm=init_lstm_params(rng, e, d, dtype),
        lstm2_subtitle=init_lstm_params(rng, d10, h2, dtype),
        lstm2_video=init_lstm_params(rng, d10, h2, dtype),
        score_w_subtitle=uniform_init(rng, (2 * h2, 1), 2 * h2, dtype),
        score_b_subtitle=uniform_init(rng, (1,), 1, dtype),
        score_w_video=uniform_init(rng, (2 * h2, 1), 2 * h2, dtype),
        score_b_video=uniform_init(rng, (1,), 1, dtype),
        span_w=uniform_init(rng, (5 * 2 * h2, 2), 5 * 2 * h2, dtype),
        span_b=uniform_init(rng, (2,), 1, dtype),
    )


@dataclass
class ForwardResult:
    answer_probs: Tensor            # B x 5
    loss_qa: Tensor | None
    loss_ma: Tensor | None
    loss_tl: Tensor | None
    span_pred: Tensor | None        # B x 2
    correct: np.ndarray             # B


def _pad_batch(seqs, width: int) -> list[int]:
    flat = []
    for s in seqs:
        flat.extend(s)
        flat.extend([PAD] * (width - len(s)))
    return flat


def pad_widths(samples) -> tuple[int, int]:
    """Dataset-wide question/answer pad widths, so a sample's encoding
    never depends on what else shares its batch."""
    m_q = max(len(s.question_tokens) for s in samples)
    m_a = max(len(a) for s in samples for a in s.answers)
    return m_q, m_a


def forward_batch(params: ModelParams, batch: list[EpisodeSample], cfg: RunConfig,
                  need: set[str], dtype=np.float32,
                  pad_q: int | None = None, pad_a: int | None = None) -> ForwardResult:
    """Run the active streams over a batch; compute the losses in `need`."""
    model = cfg.model
    bsz = len(batch)
    t_clip = len(batch[0].concept_tokens)
    if any(len(s.concept_tokens) != t_clip for s in batch):
        raise ValueError("batch mixes clip lengths")

    m_q = pad_q or max(len(s.question_tokens) for s in batch)
    m_a = pad_a or max(len(a) for s in batch for a in s.answers)
    q_ids = _pad_batch([s.question_tokens for s in batch], m_q)
    a_ids = _pad_batch([a for s in batch for a in s.answers], m_a)

    h_q = bilstm_batch(embed_tokens(q_ids, params.embed), params.text_lstm, m_q)
    h_ans = bilstm_batch(embed_tokens(a_ids, params.embed), params.text_lstm, m_a)

    contexts = {}
    if "subtitle" in cfg.streams or "ma" in need:
        sub_ids = _pad_batch([s.subtitle_tokens for s in batch], t_clip)
        contexts["subtitle"] = bilstm_batch(embed_tokens(sub_ids, params.embed),
                                            params.text_lstm, t_clip)
    if "video-cpt" in cfg.streams or "ma" in need:
        cpt_ids = _pad_batch([s.concept_tokens for s in batch], t_clip)
        contexts["video-cpt"] = bilstm_batch(embed_tokens(cpt_ids, params.embed),
                                             params.video_lstm, t_clip)
    if "video-img" in cfg.streams:
        feats = np.concatenate([s.video_features for s in batch], axis=0)
        projected = project_video(T.tensor(feats, dtype=dtype), params.video_w, params.video_b)
        contexts["video-img"] = bilstm_batch(projected, params.video_lstm, t_clip)

    stream_scores = []
    stream_ucat = []
    for stream in cfg.streams:
        h_ctx = contexts[stream]
        kind = STREAM_KIND[stream]
        att_q = qa_head.attention_blocks(h_ctx, h_q, bsz, t_clip, 1, m_q)
        att_a = qa_head.attention_blocks(h_ctx, h_ans, bsz, t_clip, 5, m_a)
        fused = qa_head.fuse(T.repeat_blocks(h_ctx, t_clip, 5),
                             T.repeat_blocks(att_q, t_clip, 5),
                             att_a)
        encoded = bilstm_batch(fused, params.lstm2(kind), t_clip)
        u = T.maxpool_blocks(encoded, steps=t_clip)                    # 5B x 10d
        w_s, b_s = params.score_head(kind)
        stream_scores.append(T.reshape(affine_rows(u, w_s, b_s), (bsz, 5)))
        stream_ucat.append(T.reshape(u, (bsz, u.shape[1] * 5)))

    answer_probs = qa_head.combine_streams(stream_scores)
    correct = np.array([s.correct_index for s in batch], dtype=np.int64)

    loss_qa = loss_ma = loss_tl = span_pred = None
    if "qa" in need:
        loss_qa = qa_head.qa_loss(answer_probs, correct, loss_form=model.loss_form)
    if "tl" in need:
        u_avg = stream_ucat[0]
        for extra in stream_ucat[1:]:
            u_avg = T.add(u_avg, extra)
        if len(stream_ucat) > 1:
            u_avg = T.scale(u_avg, 1.0 / len(stream_ucat))
        span_pred = aux.predict_span(u_avg, params.span_w, params.span_b)
        gt = np.array([[s.gt_span.start, s.gt_span.end] for s in batch])
        loss_tl = aux.temporal_loss_batch(span_pred, gt, reg_form=model.reg_form)
    if "ma" in need:
        video_key = "video-cpt" if "video-cpt" in contexts else "video-img"
        pooled_v = T.maxpool_blocks(contexts[video_key], steps=t_clip)
        pooled_s = T.maxpool_blocks(contexts["subtitle"], steps=t_clip)
        loss_ma = aux.alignment_loss_matrix(pooled_v, pooled_s, margin=model.margin)

    return ForwardResult(answer_probs, loss_qa, loss_ma, loss_tl, span_pred, correct)


def single_sample_probs(params: ModelParams, sample: EpisodeSample, cfg: RunConfig,
                        dtype=np.float32, pad_q: int | None = None,
                        pad_a: int | None = None) -> np.ndarray:
    """Answer probabilities for one episode (reference path for tests)."""
    with T.no_grad():
        res = forward_batch(params, [sample], cfg, need=set(), dtype=dtype,
                            pad_q=pad_q, pad_a=pad_a)
    return res.answer_probs.data[0]
