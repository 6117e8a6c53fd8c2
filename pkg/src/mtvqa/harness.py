"""Training loop, evaluation, gradient checking, ablation, checkpoints.

Everything here is deterministic in (seed, config, dataset): batch
composition comes from a counter-keyed generator, metrics rows carry no
timestamps, and checkpoints round-trip parameters bitwise.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import sys

import numpy as np

from . import model as M
from . import tensor as T
from .config import RunConfig, config_hash, run_config_to_dict
from .data import dataset_checksum, generate_split, load_split
from .optim import Adam
from .schedule import LossWeights, ScheduleSpec, total_loss, weights_at

METRIC_COLUMNS = ("step", "alpha_qa", "alpha_ma", "alpha_tl",
                  "loss_qa", "loss_ma", "loss_tl", "loss_total", "batch_acc")

_STREAM_INIT = 11
_STREAM_BATCH = 12
ABLATION_VARIANTS = (("qa",), ("qa", "ma"), ("qa", "tl"), ("qa", "ma", "tl"))


class TrainingDiverged(RuntimeError):
    pass


def _rng(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def build_model(cfg: RunConfig, seed: int, dtype=np.float32) -> M.ModelParams:
    return M.init_model(cfg.model, _rng(seed, _STREAM_INIT), dtype=dtype)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path_dir: str, params: M.ModelParams, step: int, cfg: RunConfig):
    os.makedirs(path_dir, exist_ok=True)
    named = M.named_parameters(params)
    manifest = {"step": int(step), "config_hash": config_hash(cfg),
                "dtype": "<f4", "params": []}
    offset = 0
    blobs = []
    for name, p in named:
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        manifest["params"].append({"name": name, "shape": list(p.shape),
                                   "offset": offset, "bytes": len(raw)})
        offset += len(raw)
        blobs.append(raw)
    with open(os.path.join(path_dir, "params.bin"), "wb") as fh:
        fh.write(b"".join(blobs))
    with open(os.path.join(path_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path_dir: str, params: M.ModelParams, cfg: RunConfig | None = None) -> int:
    """Load parameters in place; returns the stored step."""
    with open(os.path.join(path_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    if cfg is not None and manifest["config_hash"] != config_hash(cfg):
        print(f"warning: checkpoint config hash {manifest['config_hash'][:12]} does not "
              f"match current config {config_hash(cfg)[:12]}", file=sys.stderr)
    with open(os.path.join(path_dir, "params.bin"), "rb") as fh:
        blob = fh.read()
    by_name = dict(M.named_parameters(params))
    for entry in manifest["params"]:
        arr = np.frombuffer(blob, dtype="<f4", count=entry["bytes"] // 4,
                            offset=entry["offset"]).reshape(entry["shape"])
        tgt = by_name[entry["name"]]
        if list(tgt.shape) != entry["shape"]:
            raise ValueError(f"checkpoint shape mismatch for {entry['name']}: "
                             f"{entry['shape']} vs {list(tgt.shape)}")
        tgt.data = arr.astype(tgt.dtype).copy()
    return int(manifest["step"])


# ---------------------------------------------------------------- training

def _format(x: float) -> str:
    return repr(float(x))


def active_losses(cfg: RunConfig, weights: LossWeights) -> set[str]:
    """Tasks evaluated this step: enabled in config and nonzero weight.
    Zero-weight tasks are skipped outright (same loss value as multiplying
    by zero, fewer ops)."""
    wmap = {"qa": weights.qa, "ma": weights.ma, "tl": weights.tl}
    return {name for name in cfg.losses if wmap[name] != 0.0}


def masked_weights(cfg: RunConfig, weights: LossWeights) -> LossWeights:
    return LossWeights(
        qa=weights.qa if "qa" in cfg.losses else 0.0,
        ma=weights.ma if "ma" in cfg.losses else 0.0,
        tl=weights.tl if "tl" in cfg.losses else 0.0,
    )


def train(cfg: RunConfig, seed: int, out_dir: str, train_samples=None) -> dict:
    """Run the fixed-step training budget; write metrics.csv, run_meta.json,
    and a final checkpoint under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    if train_samples is None:
        train_samples = load_split(cfg.data_dir, "train")
        train_checksum = dataset_checksum(cfg.data_dir, "train")
    else:
        train_checksum = "in-memory"
    n_train = len(train_samples)
    bsz = cfg.optimizer.batch_size
    if bsz > n_train:
        raise ValueError(f"batch_size {bsz} exceeds train split of {n_train}")

    spec = ScheduleSpec.from_config(cfg.schedule)
    params = build_model(cfg, seed)
    opt = Adam(M.named_parameters(params), lr=cfg.optimizer.learning_rate,
               beta1=cfg.optimizer.beta1, beta2=cfg.optimizer.beta2, eps=cfg.optimizer.eps)
    batch_rng = _rng(seed, _STREAM_BATCH)
    pad_q, pad_a = M.pad_widths(train_samples)

    rows = [",".join(METRIC_COLUMNS)]
    for step in range(cfg.optimizer.total_steps):
        idx = batch_rng.choice(n_train, size=bsz, replace=False)
        batch = [train_samples[i] for i in idx]
        weights = masked_weights(cfg, weights_at(spec, step))
        need = active_losses(cfg, weights)

        res = M.forward_batch(params, batch, cfg, need, pad_q=pad_q, pad_a=pad_a)
        losses = {"qa": res.loss_qa, "ma": res.loss_ma, "tl": res.loss_tl}
        for name in need:
            value = losses[name].item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite {name} loss at step {step}")
        loss = total_loss(losses["qa"], losses["ma"], losses["tl"], weights)
        opt.zero_grad()
        loss.backward()
        opt.step()

        if step % cfg.log_every == 0 or step == cfg.optimizer.total_steps - 1:
            acc = float((np.argmax(res.answer_probs.data, axis=1) == res.correct).mean())
            rows.append(",".join([str(step)] + [_format(v) for v in (
                weights.qa, weights.ma, weights.tl,
                losses["qa"].item() if losses["qa"] is not None else 0.0,
                losses["ma"].item() if losses["ma"] is not None else 0.0,
                losses["tl"].item() if losses["tl"] is not None else 0.0,
                loss.item(), acc)]))

    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    ckpt_dir = os.path.join(out_dir, "checkpoint")
    save_checkpoint(ckpt_dir, params, cfg.optimizer.total_steps, cfg)
    with open(os.path.join(out_dir, "run_meta.json"), "w") as fh:
        json.dump({"seed": seed, "config": run_config_to_dict(cfg),
                   "config_hash": config_hash(cfg),
                   "train_checksum": train_checksum}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"params": params, "metrics_path": metrics_path, "checkpoint_dir": ckpt_dir}


def evaluate(params: M.ModelParams, cfg: RunConfig, samples, eval_batch: int = 64) -> dict:
    """Accuracy plus mean span metrics over a split; no parameter updates."""
    from .aux_losses import TimeSpan, overlap_length, temporal_localization_loss

    correct = 0
    tl_values = []
    overlap_ratios = []
    pad_q, pad_a = M.pad_widths(samples)
    with T.no_grad():
        for lo in range(0, len(samples), eval_batch):
            chunk = samples[lo:lo + eval_batch]
            res = M.forward_batch(params, chunk, cfg, need={"tl"}, pad_q=pad_q, pad_a=pad_a)
            pred = np.argmax(res.answer_probs.data, axis=1)
            correct += int((pred == res.correct).sum())
            spans = np.clip(res.span_pred.data.astype(np.float64), 0.0, 1.0)
            for s, p in zip(chunk, spans):
                ps = TimeSpan(float(p[0]), float(p[1]))
                tl_values.append(temporal_localization_loss(s.gt_span, ps,
                                                            reg_form=cfg.model.reg_form))
                overlap_ratios.append(overlap_length(s.gt_span, ps) / s.gt_span.length)
    n = len(samples)
    return {"n": n, "accuracy": correct / n,
            "mean_tl_loss": float(np.mean(tl_values)),
            "mean_overlap_ratio": float(np.mean(overlap_ratios))}


def evaluate_checkpoint(ckpt_dir: str, cfg: RunConfig, split: str) -> dict:
    params = build_model(cfg, seed=0)
    load_checkpoint(ckpt_dir, params, cfg)
    return evaluate(params, cfg, load_split(cfg.data_dir, split))


# ---------------------------------------------------------------- gradcheck

def gradcheck_config() -> RunConfig:
    """Tiny dims the finite-difference sweep can afford."""
    from .config import run_config_from_dict

    return run_config_from_dict({
        "model": {"hidden_size": 8, "embed_dim": 8, "video_feat_dim": 8, "vocab_size": 40},
        "generator": {"seed": 7, "vocab_size": 40, "clip_len": 9, "span_min": 2, "span_max": 3,
                      "video_feat_dim": 8, "train_count": 8, "val_count": 1, "test_count": 1,
                      "num_concepts": 16, "concepts_per_category": 4},
        "optimizer": {"batch_size": 3, "total_steps": 1},
        "streams": ["subtitle", "video-cpt", "video-img"],
    })


def _loss_for(params, batch, cfg, mode: str):
    need = {"qa", "ma", "tl"} if mode == "combined" else {mode}
    res = M.forward_batch(params, batch, cfg, need, dtype=np.float64)
    if mode == "combined":
        return total_loss(res.loss_qa, res.loss_ma, res.loss_tl,
                          LossWeights(0.2, 1.0, 0.2))
    return {"qa": res.loss_qa, "ma": res.loss_ma, "tl": res.loss_tl}[mode]


def gradcheck(cfg: RunConfig | None = None, modes=("qa", "ma", "tl", "combined"),
              step_size: float = 1e-3, threshold: float = 1e-4,
              max_entries: int = 10, seed: int = 0) -> dict:
    """Analytic vs central-finite-difference gradients through each loss.

    Runs in float64. For each parameter tensor a deterministic sample of
    entries is perturbed (all of them for small tensors); reported is the
    max relative error per tensor per mode.

    Finite differences are only valid where the loss is smooth, so each
    probe runs under a decision trace (argmax picks, relu/clip active
    sets); entries whose +h/-h evaluations take different branches than
    the unperturbed pass straddle a kink and are skipped (counted in the
    report), mirroring the away-from-the-boundary rule for the span loss.
    """
    cfg = cfg or gradcheck_config()
    params = M.init_model(cfg.model, _rng(seed, _STREAM_INIT), dtype=np.float64)
    batch = generate_split(cfg.generator, "train")[:cfg.optimizer.batch_size]
    named = M.named_parameters(params)
    report = {"modes": {}, "passed": True, "threshold": threshold,
              "checked_entries": 0, "skipped_entries": 0}

    def traced_loss(mode):
        with T.trace_decisions() as tr:
            value = _loss_for(params, batch, cfg, mode).item()
        return value, tr.digest

    for mode in modes:
        loss = _loss_for(params, batch, cfg, mode)
        for _, p in named:
            p.grad = None
        loss.backward()
        analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                    for name, p in named}
        _, base_digest = traced_loss(mode)

        mode_report = {}
        mode_id = {"qa": 0, "ma": 1, "tl": 2, "combined": 3}[mode]
        pick_rng = _rng(seed, 13, mode_id)
        for name, p in named:
            flat = p.data.reshape(-1)
            count = flat.size
            entries = (np.arange(count) if count <= max_entries
                       else pick_rng.choice(count, size=max_entries, replace=False))
            worst = 0.0
            for j in entries:
                orig = flat[j]
                flat[j] = orig + step_size
                hi, digest_hi = traced_loss(mode)
                flat[j] = orig - step_size
                lo, digest_lo = traced_loss(mode)
                flat[j] = orig
                if digest_hi != base_digest or digest_lo != base_digest:
                    report["skipped_entries"] += 1  # probe straddles a kink
                    continue
                report["checked_entries"] += 1
                numeric = (hi - lo) / (2 * step_size)
                a = analytic[name].reshape(-1)[j]
                denom = max(abs(a), abs(numeric))
                if denom >= 1e-6:
                    worst = max(worst, abs(a - numeric) / denom)
            mode_report[name] = worst
            if worst >= threshold:
                report["passed"] = False
        report["modes"][mode] = mode_report
    return report


# ---------------------------------------------------------------- ablation

def ablate(cfg: RunConfig, seeds, out_dir: str, train_samples=None, val_samples=None) -> dict:
    """Train {QA, QA+MA, QA+TL, QA+MA+TL} x seeds and tabulate val accuracy."""
    os.makedirs(out_dir, exist_ok=True)
    if train_samples is None:
        train_samples = load_split(cfg.data_dir, "train")
    if val_samples is None:
        val_samples = load_split(cfg.data_dir, "val")

    rows = ["variant,seed,val_accuracy"]
    results = {}
    for variant in ABLATION_VARIANTS:
        name = "+".join(v.upper() for v in variant)
        accs = []
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, losses=list(variant))
            run_dir = os.path.join(out_dir, f"{'_'.join(variant)}_seed{seed}")
            out = train(run_cfg, seed, run_dir, train_samples=train_samples)
            acc = evaluate(out["params"], run_cfg, val_samples)["accuracy"]
            accs.append(acc)
            rows.append(f"{name},{seed},{_format(acc)}")
        results[name] = {"mean": float(np.mean(accs)), "std": float(np.std(accs)),
                         "accuracies": accs}
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return {"results": results, "csv_path": csv_path, "table": format_ablation_table(results)}


def format_ablation_table(results: dict) -> str:
    width = max(len(k) for k in results)
    lines = [f"{'variant'.ljust(width)}  mean_acc  std"]
    for name, r in results.items():
        lines.append(f"{name.ljust(width)}  {r['mean']:.4f}    {r['std']:.4f}")
    return "\n".join(lines)
