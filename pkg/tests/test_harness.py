import copy
import json
import math

import numpy as np
import pytest

from mtvqa import harness as H
from mtvqa import model as M
from mtvqa import tensor as T
from mtvqa.config import run_config_from_dict
from mtvqa.data import generate_split, write_datasets
from mtvqa.optim import Adam


def tiny_cfg(**over):
    base = {
        "model": {"hidden_size": 8, "embed_dim": 8, "video_feat_dim": 12, "vocab_size": 48},
        "generator": {"seed": 5, "train_count": 48, "val_count": 12, "test_count": 12,
                      "video_feat_dim": 12, "clip_len": 9, "span_min": 2, "span_max": 3},
        "optimizer": {"batch_size": 8, "total_steps": 6, "learning_rate": 0.001},
        "log_every": 2,
    }
    for key, val in over.items():
        if isinstance(val, dict):
            base.setdefault(key, {}).update(val)
        else:
            base[key] = val
    return run_config_from_dict(base)


@pytest.fixture(scope="module")
def tiny_samples():
    cfg = tiny_cfg()
    return generate_split(cfg.generator, "train")


# ---------------------------------------------------------------- adam

def adam_scalar_reference(grads, lr, b1, b2, eps, theta0):
    """Independent scalar-loop Adam for a single parameter."""
    theta, m, v = theta0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta -= lr * mhat / (math.sqrt(vhat) + eps)
    return theta


def test_adam_matches_scalar_reference_100_steps():
    # minimize (x - 3)^2 from x=0 in float64; gradient = 2(x-3)
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    x = T.tensor([0.0], requires_grad=True, dtype=np.float64)
    opt = Adam([("x", x)], lr=lr, beta1=b1, beta2=b2, eps=eps)
    grads = []
    for _ in range(100):
        opt.zero_grad()
        diff = T.sub(x, T.tensor([3.0], dtype=np.float64))
        T.sum_all(T.mul(diff, diff)).backward()
        grads.append(float(x.grad[0]))
        opt.step()
    # replay the recorded gradient sequence through the scalar reference
    expect = adam_scalar_reference(grads, lr, b1, b2, eps, 0.0)
    assert float(x.data[0]) == pytest.approx(expect, abs=1e-6)


# ---------------------------------------------------------------- training

def test_zero_steps_checkpoint_equals_init(tmp_path, tiny_samples):
    cfg = tiny_cfg(optimizer={"total_steps": 0})
    out = H.train(cfg, seed=3, out_dir=str(tmp_path / "run"), train_samples=tiny_samples)
    fresh = H.build_model(cfg, seed=3)
    for (name, a), (_, b) in zip(M.named_parameters(out["params"]),
                                 M.named_parameters(fresh)):
        assert np.array_equal(a.data, b.data), name


def test_same_seed_byte_identical_metrics(tmp_path, tiny_samples):
    cfg = tiny_cfg()
    H.train(cfg, seed=7, out_dir=str(tmp_path / "a"), train_samples=tiny_samples)
    H.train(cfg, seed=7, out_dir=str(tmp_path / "b"), train_samples=tiny_samples)
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b
    assert a.decode().splitlines()[0] == ",".join(H.METRIC_COLUMNS)


def test_different_seed_differs(tmp_path, tiny_samples):
    cfg = tiny_cfg()
    H.train(cfg, seed=7, out_dir=str(tmp_path / "a"), train_samples=tiny_samples)
    H.train(cfg, seed=8, out_dir=str(tmp_path / "c"), train_samples=tiny_samples)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "c" / "metrics.csv").read_bytes()


def test_checkpoint_roundtrip_bitwise_and_eval_identical(tmp_path, tiny_samples):
    cfg = tiny_cfg()
    out = H.train(cfg, seed=9, out_dir=str(tmp_path / "run"), train_samples=tiny_samples)
    before = {name: p.data.copy() for name, p in M.named_parameters(out["params"])}
    eval_before = H.evaluate(out["params"], cfg, tiny_samples[:16])

    loaded = H.build_model(cfg, seed=0)
    step = H.load_checkpoint(out["checkpoint_dir"], loaded, cfg)
    assert step == cfg.optimizer.total_steps
    for name, p in M.named_parameters(loaded):
        assert np.array_equal(p.data, before[name]), name
    eval_after = H.evaluate(loaded, cfg, tiny_samples[:16])
    assert eval_after == eval_before


def test_checkpoint_config_mismatch_warns(tmp_path, tiny_samples, capsys):
    cfg = tiny_cfg()
    out = H.train(cfg, seed=9, out_dir=str(tmp_path / "run"), train_samples=tiny_samples)
    other = tiny_cfg(optimizer={"learning_rate": 0.01})
    loaded = H.build_model(other, seed=0)
    H.load_checkpoint(out["checkpoint_dir"], loaded, other)
    assert "config hash" in capsys.readouterr().err


def test_checkpoint_shape_mismatch_is_load_error(tmp_path, tiny_samples):
    cfg = tiny_cfg()
    out = H.train(cfg, seed=9, out_dir=str(tmp_path / "run"), train_samples=tiny_samples)
    smaller = tiny_cfg(model={"hidden_size": 4})
    loaded = H.build_model(smaller, seed=0)
    with pytest.raises(ValueError, match="shape mismatch"):
        H.load_checkpoint(out["checkpoint_dir"], loaded, smaller)


def test_zero_weight_schedule_bitwise_equals_qa_only(tmp_path, tiny_samples):
    # same constant (1,0,0) schedule; one run disables aux losses, the other
    # carries them with zero weight -> identical CSVs and parameters
    sched = {"anchors": [[0, [1.0, 0.0, 0.0]]], "interpolation": "linear"}
    full = tiny_cfg(schedule=sched)
    qa_only = tiny_cfg(schedule=sched, losses=["qa"])
    out_a = H.train(full, seed=11, out_dir=str(tmp_path / "zero_w"), train_samples=tiny_samples)
    out_b = H.train(qa_only, seed=11, out_dir=str(tmp_path / "qa_only"), train_samples=tiny_samples)
    assert (tmp_path / "zero_w" / "metrics.csv").read_bytes() == \
           (tmp_path / "qa_only" / "metrics.csv").read_bytes()
    for (name, a), (_, b) in zip(M.named_parameters(out_a["params"]),
                                 M.named_parameters(out_b["params"])):
        assert np.array_equal(a.data, b.data), name


def test_nan_loss_aborts_with_diagnostic(tmp_path, tiny_samples, monkeypatch):
    cfg = tiny_cfg()
    real_forward = M.forward_batch

    def poisoned(params, batch, run_cfg, need, dtype=np.float32, **kw):
        res = real_forward(params, batch, run_cfg, need, dtype, **kw)
        res.loss_tl = T.Tensor(np.array([1.0]), _parents=(), _op="poison")
        res.loss_tl.data[0] = np.nan
        return res

    monkeypatch.setattr(H.M, "forward_batch", poisoned)
    with pytest.raises(H.TrainingDiverged, match="tl loss at step 0"):
        H.train(cfg, seed=13, out_dir=str(tmp_path / "nan"), train_samples=tiny_samples)


def test_untrained_model_near_chance(tiny_samples):
    cfg = tiny_cfg(generator={"train_count": 600})
    samples = generate_split(cfg.generator, "train")
    params = H.build_model(cfg, seed=21)
    res = H.evaluate(params, cfg, samples)
    assert abs(res["accuracy"] - 0.2) < 0.06  # coarse; acceptance runs 2000 samples


def test_evaluate_deterministic(tiny_samples):
    cfg = tiny_cfg()
    params = H.build_model(cfg, seed=5)
    a = H.evaluate(params, cfg, tiny_samples[:24])
    b = H.evaluate(params, cfg, tiny_samples[:24])
    assert a == b


def test_single_sample_matches_batched_eval(tiny_samples):
    cfg = tiny_cfg()
    params = H.build_model(cfg, seed=6)
    pad_q, pad_a = M.pad_widths(tiny_samples[:4])
    with T.no_grad():
        batched = M.forward_batch(params, tiny_samples[:4], cfg, need=set())
    for i in range(4):
        single = M.single_sample_probs(params, tiny_samples[i], cfg, pad_q=pad_q, pad_a=pad_a)
        np.testing.assert_allclose(single, batched.answer_probs.data[i], atol=5e-6)


def test_batch_mixing_both_video_streams(tiny_samples):
    cfg = tiny_cfg(streams=["subtitle", "video-cpt", "video-img"])
    params = H.build_model(cfg, seed=6)
    with T.no_grad():
        res = M.forward_batch(params, tiny_samples[:4], cfg, need={"qa", "ma", "tl"})
    assert res.answer_probs.shape == (4, 5)
    np.testing.assert_allclose(res.answer_probs.data.sum(axis=1), np.ones(4), atol=1e-5)


def test_unimodal_video_stream_runs(tiny_samples):
    cfg = tiny_cfg(streams=["video-cpt"], losses=["qa", "tl"])
    params = H.build_model(cfg, seed=6)
    with T.no_grad():
        res = M.forward_batch(params, tiny_samples[:4], cfg, need={"qa", "tl"})
    assert res.loss_ma is None and res.loss_qa is not None


def test_subtitle_shuffle_degrades_trained_model(tmp_path):
    # cross-episode subtitle shuffling must cost a trained model accuracy
    # (the data-level to-chance check lives in test_data; here the model
    # keeps its intact video stream, so the drop is partial)
    from mtvqa.data import shuffle_subtitles

    cfg = run_config_from_dict({
        "model": {"hidden_size": 12, "embed_dim": 16, "video_feat_dim": 24, "vocab_size": 48},
        "generator": {"seed": 1234, "train_count": 600, "val_count": 250, "test_count": 8},
        "optimizer": {"batch_size": 32, "total_steps": 900, "learning_rate": 0.001},
    })
    tr = generate_split(cfg.generator, "train")
    va = generate_split(cfg.generator, "val")
    out = H.train(cfg, seed=2, out_dir=str(tmp_path / "run"), train_samples=tr)
    clean = H.evaluate(out["params"], cfg, va)["accuracy"]
    shuffled = H.evaluate(out["params"], cfg, shuffle_subtitles(va, seed=9))["accuracy"]
    assert clean > 0.35  # learned something real
    assert shuffled < clean  # destroying subtitles costs accuracy


# ---------------------------------------------------------------- files

def test_write_and_reload_datasets_train(tmp_path):
    cfg = tiny_cfg(generator={"train_count": 24, "val_count": 8, "test_count": 8})
    write_datasets(cfg.generator, str(tmp_path / "data"))
    cfg2 = copy.deepcopy(cfg)
    cfg2.data_dir = str(tmp_path / "data")
    out = H.train(cfg2, seed=3, out_dir=str(tmp_path / "run"))
    meta = json.loads((tmp_path / "run" / "run_meta.json").read_text())
    assert meta["seed"] == 3
    assert len(meta["train_checksum"]) == 64
    ev = H.evaluate_checkpoint(out["checkpoint_dir"], cfg2, "val")
    assert ev["n"] == 8


# ---------------------------------------------------------------- gradcheck

def test_gradcheck_qa_only_fast():
    report = H.gradcheck(modes=("qa",), max_entries=2)
    worst = max(report["modes"]["qa"].values())
    assert report["passed"], f"worst rel err {worst}"


def test_ablate_plumbing(tmp_path, tiny_samples):
    cfg = tiny_cfg(optimizer={"total_steps": 3})
    result = H.ablate(cfg, seeds=[1], out_dir=str(tmp_path / "abl"),
                      train_samples=tiny_samples[:32], val_samples=tiny_samples[32:48])
    assert set(result["results"]) == {"QA", "QA+MA", "QA+TL", "QA+MA+TL"}
    lines = (tmp_path / "abl" / "ablation.csv").read_text().splitlines()
    assert lines[0] == "variant,seed,val_accuracy"
    assert len(lines) == 5
    assert "QA+MA+TL" in result["table"]
