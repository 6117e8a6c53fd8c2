"""Deterministic synthetic episodes with planted ground truth.

Each episode's latent concept sequence is a run of contiguous scenes:
one concept repeated over consecutive steps, like frames within a shot.
The video feature stream is a fixed per-concept embedding plus noise,
the concept-token stream is the latent sequence itself, and the subtitle
emits the same concepts with occasional filler — that shared origin is
what the alignment task learns.

The ground-truth span is one scene (the one sitting at the midpoint of a
randomly chosen third of the clip), so span boundaries are a property of
the content, not of the question. The question carries that third's
marker token plus the target concept's category — never the answer
itself — and the distractors name other scenes' concepts: present in
the clip, absent from the window, which kills bag-of-clip shortcuts and
makes temporal grounding load-bearing.

Randomness is counter-based: sample i of a split draws from
hash(seed, split, i), so generation order never matters.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .aux_losses import TimeSpan
from .config import ConfigError, GeneratorConfig

PAD = 0
QWHAT = 1
MARKER_BASE = 2          # three markers: early / middle / late
NUM_MARKERS = 3
CATEGORY_BASE = MARKER_BASE + NUM_MARKERS

_STREAM_EMBED = 1
_STREAM_SAMPLE = 2
_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}


def concept_base(cfg: GeneratorConfig) -> int:
    return CATEGORY_BASE + cfg.num_categories


def filler_base(cfg: GeneratorConfig) -> int:
    return concept_base(cfg) + cfg.num_concepts


@dataclass
class EpisodeSample:
    video_features: np.ndarray     # n_img x video_feat_dim
    concept_tokens: list[int]      # n_cpt
    subtitle_tokens: list[int]     # n_S
    question_tokens: list[int]     # n_q
    answers: list[list[int]]       # 5 candidate token sequences
    correct_index: int
    gt_span: TimeSpan

    def __post_init__(self):
        if len(self.answers) != 5:
            raise ValueError(f"exactly 5 candidate answers required, got {len(self.answers)}")
        if not 0 <= self.correct_index <= 4:
            raise ValueError(f"correct_index out of range: {self.correct_index}")
        self.gt_span.require_ground_truth()
        seqs = [self.concept_tokens, self.subtitle_tokens, self.question_tokens, *self.answers]
        if len(self.video_features) == 0 or any(len(s) == 0 for s in seqs):
            raise ValueError("all sequences must be nonempty")

    def to_dict(self) -> dict:
        return {
            "video_features": [[float(x) for x in row] for row in self.video_features],
            "concept_tokens": list(map(int, self.concept_tokens)),
            "subtitle_tokens": list(map(int, self.subtitle_tokens)),
            "question_tokens": list(map(int, self.question_tokens)),
            "answers": [list(map(int, a)) for a in self.answers],
            "correct_index": int(self.correct_index),
            "gt_span": [self.gt_span.start, self.gt_span.end],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSample":
        return cls(
            video_features=np.asarray(d["video_features"], dtype=np.float64),
            concept_tokens=list(d["concept_tokens"]),
            subtitle_tokens=list(d["subtitle_tokens"]),
            question_tokens=list(d["question_tokens"]),
            answers=[list(a) for a in d["answers"]],
            correct_index=int(d["correct_index"]),
            gt_span=TimeSpan(*d["gt_span"]),
        )


def _rng(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def concept_feature_table(cfg: GeneratorConfig) -> np.ndarray:
    """Fixed concept -> dense feature map shared by every sample of a seed."""
    rng = _rng(cfg.seed, _STREAM_EMBED)
    return rng.uniform(-1.0, 1.0, size=(cfg.num_concepts, cfg.video_feat_dim))


def _scene_lengths(rng: np.random.Generator, total: int, lo: int, hi: int) -> list[int]:
    """Partition `total` steps into scene lengths within [lo, hi]."""
    lengths = []
    remaining = total
    while remaining:
        options = [l for l in range(lo, min(hi, remaining) + 1)
                   if remaining - l == 0 or remaining - l >= lo]
        if not options:
            raise ConfigError(f"span range [{lo}, {hi}] cannot tile a clip of {total} steps")
        pick = int(rng.choice(options))
        lengths.append(pick)
        remaining -= pick
    return lengths


def generate_episode(cfg: GeneratorConfig, index: int, split: str = "train",
                     feature_table: np.ndarray | None = None) -> EpisodeSample:
    """Pure function of (cfg, split, index)."""
    counts = {"train": cfg.train_count, "val": cfg.val_count, "test": cfg.test_count}
    if split not in counts:
        raise ConfigError(f"unknown split {split!r}")
    if not 0 <= index < counts[split]:
        raise ConfigError(f"index {index} outside {split} split of {counts[split]}")
    if feature_table is None:
        feature_table = concept_feature_table(cfg)
    rng = _rng(cfg.seed, _STREAM_SAMPLE, _SPLIT_IDS[split], index)
    t_clip = cfg.clip_len
    n_con = cfg.num_concepts
    cpt0 = concept_base(cfg)
    fill0 = filler_base(cfg)
    n_fill = cfg.vocab_size - fill0

    # contiguous scenes with distinct concepts
    lengths = _scene_lengths(rng, t_clip, cfg.span_min, cfg.span_max)
    scene_concepts = [int(c) for c in rng.choice(n_con, size=len(lengths), replace=False)]
    starts = np.cumsum([0] + lengths[:-1])

    # the window is the scene covering the midpoint of a random third
    marker = int(rng.integers(0, NUM_MARKERS))
    midpoint = (marker + 0.5) * t_clip / NUM_MARKERS
    scene_idx = max(i for i, s in enumerate(starts) if s <= midpoint)
    t0 = int(starts[scene_idx])
    width = lengths[scene_idx]
    target = scene_concepts[scene_idx]
    cat = target // cfg.concepts_per_category

    # distractors: other scenes' concepts (in clip, outside the window);
    # force one to share the target's category, pad from unused concepts
    others = [c for i, c in enumerate(scene_concepts) if i != scene_idx]
    unused = [c for c in range(n_con) if c not in scene_concepts]
    if not any(c // cfg.concepts_per_category == cat for c in others):
        same_cat = [c for c in unused if c // cfg.concepts_per_category == cat]
        if same_cat:
            swap = int(rng.integers(0, len(others)))
            others[swap] = int(rng.choice(same_cat))
            non_window = [i for i in range(len(scene_concepts)) if i != scene_idx]
            scene_concepts[non_window[swap]] = others[swap]
            unused = [c for c in range(n_con) if c not in scene_concepts]
    rng.shuffle(others)
    distractors = others[:4]
    while len(distractors) < 4:
        pick = int(rng.choice(unused))
        unused.remove(pick)
        distractors.append(pick)

    concepts = np.repeat(scene_concepts, lengths)
    noise = rng.normal(size=(t_clip, cfg.video_feat_dim))
    video_features = feature_table[concepts] + cfg.noise_sigma * noise
    concept_tokens = [cpt0 + int(c) for c in concepts]
    subtitle_tokens = [
        int(fill0 + rng.integers(n_fill)) if rng.random() < cfg.subtitle_filler_prob
        else cpt0 + int(c)
        for c in concepts
    ]

    question_tokens = [QWHAT, CATEGORY_BASE + cat, MARKER_BASE + marker]
    question_tokens += [int(fill0 + rng.integers(n_fill)) for _ in range(int(rng.integers(0, 3)))]

    lengths = rng.integers(1, 4, size=5)  # iid, independent of correctness
    ordered = [target] + distractors
    answers_unshuffled = [
        [cpt0 + c] + [int(fill0 + rng.integers(n_fill)) for _ in range(int(l) - 1)]
        for c, l in zip(ordered, lengths)
    ]
    perm = rng.permutation(5)
    answers = [answers_unshuffled[j] for j in perm]
    correct_index = int(np.nonzero(perm == 0)[0][0])

    sample = EpisodeSample(
        video_features=video_features,
        concept_tokens=concept_tokens,
        subtitle_tokens=subtitle_tokens,
        question_tokens=question_tokens,
        answers=answers,
        correct_index=correct_index,
        gt_span=TimeSpan(t0 / t_clip, (t0 + width) / t_clip),
    )
    if not answerability_check(sample, cfg):
        raise AssertionError(f"generator emitted an unanswerable sample ({split}, {index})")
    return sample


def answerability_check(sample: EpisodeSample, cfg: GeneratorConfig) -> bool:
    """Rule-based validity: the correct answer's concept occurs inside the
    ground-truth window of the latent sequence and no distractor's does."""
    t_clip = len(sample.concept_tokens)
    t0 = round(sample.gt_span.start * t_clip)
    t1 = round(sample.gt_span.end * t_clip)
    window = set(sample.concept_tokens[t0:t1])
    for i, answer in enumerate(sample.answers):
        head = answer[0]
        if i == sample.correct_index:
            if head not in window:
                return False
        elif head in window:
            return False
    return True


def answer_lengths(sample: EpisodeSample) -> list[int]:
    return [len(a) for a in sample.answers]


def longest_answer_choice(sample: EpisodeSample) -> int:
    """Length-bias baseline: longest candidate, lowest index on ties."""
    lengths = answer_lengths(sample)
    return int(np.argmax(lengths))


def shuffle_subtitles(samples: list[EpisodeSample], seed: int) -> list[EpisodeSample]:
    """Destroy the subtitle signal by swapping subtitles across episodes."""
    rng = _rng(seed, 99)
    perm = rng.permutation(len(samples))
    out = []
    for s, j in zip(samples, perm):
        out.append(EpisodeSample(
            video_features=s.video_features,
            concept_tokens=list(s.concept_tokens),
            subtitle_tokens=list(samples[j].subtitle_tokens),
            question_tokens=list(s.question_tokens),
            answers=[list(a) for a in s.answers],
            correct_index=s.correct_index,
            gt_span=s.gt_span,
        ))
    return out


# ---------------------------------------------------------------- dataset io

def generate_split(cfg: GeneratorConfig, split: str) -> list[EpisodeSample]:
    counts = {"train": cfg.train_count, "val": cfg.val_count, "test": cfg.test_count}
    table = concept_feature_table(cfg)
    return [generate_episode(cfg, i, split, feature_table=table) for i in range(counts[split])]


def write_datasets(cfg: GeneratorConfig, out_dir: str) -> dict:
    """Write train/val/test JSONL plus meta.json with config and checksums."""
    os.makedirs(out_dir, exist_ok=True)
    checksums = {}
    counts = {}
    for split in ("train", "val", "test"):
        path = os.path.join(out_dir, f"{split}.jsonl")
        samples = generate_split(cfg, split)
        blob = "".join(json.dumps(s.to_dict()) + "\n" for s in samples).encode()
        with open(path, "wb") as fh:
            fh.write(blob)
        checksums[split] = hashlib.sha256(blob).hexdigest()
        counts[split] = len(samples)
    import dataclasses

    meta = {"config": dataclasses.asdict(cfg), "counts": counts, "checksums": checksums}
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def load_split(data_dir: str, split: str) -> list[EpisodeSample]:
    path = os.path.join(data_dir, f"{split}.jsonl")
    samples = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                samples.append(EpisodeSample.from_dict(json.loads(line)))
    return samples


def dataset_checksum(data_dir: str, split: str) -> str:
    with open(os.path.join(data_dir, f"{split}.jsonl"), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
