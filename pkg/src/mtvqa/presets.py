"""Ready-made run configurations.

The model dims here are smaller than the ModelConfig defaults: these
presets are sized so the standard runs (overfit sanity, ablation sweep)
fit single-core desktop budgets.
"""

from __future__ import annotations

from .config import RunConfig, run_config_from_dict


def default_run_config() -> RunConfig:
    """Default training setup on the standard 2000/500/500 dataset."""
    return run_config_from_dict({
        "model": {"hidden_size": 12, "embed_dim": 16, "video_feat_dim": 24, "vocab_size": 48},
        "generator": {"seed": 1234},
        "optimizer": {"batch_size": 32, "total_steps": 2000, "learning_rate": 0.001},
    })


def overfit_config() -> RunConfig:
    """64-sample memorization run: full model, 2000 steps."""
    return run_config_from_dict({
        "model": {"hidden_size": 12, "embed_dim": 16, "video_feat_dim": 24, "vocab_size": 48},
        "generator": {"seed": 5, "train_count": 64, "val_count": 8, "test_count": 8},
        "optimizer": {"batch_size": 16, "total_steps": 2000, "learning_rate": 0.0003},
    })


def ablation_config() -> RunConfig:
    """Variant comparison on the default dataset.

    The step budget sits past the point where the jointly-trained model
    escapes the question-side shortcut plateau while the QA-only variant
    has not; the raised learning rate keeps 20 runs inside a two-hour
    single-core budget (the optimizer default would need ~3x the steps
    to reach the same part of the curve)."""
    return run_config_from_dict({
        "model": {"hidden_size": 12, "embed_dim": 16, "video_feat_dim": 24, "vocab_size": 48},
        "generator": {"seed": 1234},
        "optimizer": {"batch_size": 32, "total_steps": 2000, "learning_rate": 0.001},
    })
