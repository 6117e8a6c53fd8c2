import numpy as np
import pytest

from mtvqa import schedule as sched
from mtvqa import tensor as T
from mtvqa.config import ConfigError, ScheduleConfig, default_curriculum_anchors

# Hand-evaluated before implementation for the default curriculum with
# T=1000 and linear interpolation:
#   anchors (0, (0.2, 1.0, 0.2)) (250, (0.5, 0.5, 1.0))
#           (500, (1.0, 0.2, 0.5)) (1000, (1.0, 0.1, 0.1))
HAND_TABLE = {
    0: (0.2, 1.0, 0.2),
    125: (0.35, 0.75, 0.6),
    250: (0.5, 0.5, 1.0),
    375: (0.75, 0.35, 0.75),
    500: (1.0, 0.2, 0.5),
    750: (1.0, 0.15, 0.3),
    1000: (1.0, 0.1, 0.1),
    5000: (1.0, 0.1, 0.1),
}
ANCHOR_STEPS = (0, 250, 500, 1000)


def default_spec(total=1000, interpolation="linear"):
    cfg = ScheduleConfig(anchors=default_curriculum_anchors(total), interpolation=interpolation)
    return sched.ScheduleSpec.from_config(cfg)


def test_single_anchor_constant():
    spec = sched.ScheduleSpec(anchors=[(0, sched.LossWeights(1.0, 0.5, 0.25))])
    for step in (0, 1, 10, 10**6):
        assert sched.weights_at(spec, step).as_tuple() == (1.0, 0.5, 0.25)


def test_linear_midpoint():
    spec = sched.ScheduleSpec(anchors=[
        (0, sched.LossWeights(0.0, 1.0, 0.0)),
        (100, sched.LossWeights(0.0, 0.0, 1.0)),
    ])
    w = sched.weights_at(spec, 50)
    assert w.ma == pytest.approx(0.5, abs=1e-12)
    assert w.tl == pytest.approx(0.5, abs=1e-12)


def test_default_curriculum_matches_hand_table():
    spec = default_spec()
    for step, expect in HAND_TABLE.items():
        got = sched.weights_at(spec, step).as_tuple()
        if step in ANCHOR_STEPS or step == 5000:
            assert got == expect, step
        else:
            np.testing.assert_allclose(got, expect, atol=1e-9)


def test_step_wise_holds_previous_anchor():
    spec = default_spec(interpolation="step-wise")
    assert sched.weights_at(spec, 249).as_tuple() == (0.2, 1.0, 0.2)
    assert sched.weights_at(spec, 250).as_tuple() == (0.5, 0.5, 1.0)
    assert sched.weights_at(spec, 999).as_tuple() == (1.0, 0.2, 0.5)


def test_piecewise_continuity_bounded_by_anchor_slope():
    spec = default_spec()
    max_slope = max(
        abs(b - a) / (s1 - s0)
        for (s0, w0), (s1, w1) in zip(spec.anchors, spec.anchors[1:])
        for a, b in zip(w0.as_tuple(), w1.as_tuple()))
    for step in range(0, 1100, 7):
        w0 = np.array(sched.weights_at(spec, step).as_tuple())
        w1 = np.array(sched.weights_at(spec, step + 1).as_tuple())
        assert np.abs(w1 - w0).max() <= max_slope + 1e-12


def test_empty_schedule_rejected():
    with pytest.raises(ConfigError):
        sched.ScheduleSpec(anchors=[])


def test_anchor_ordering_enforced():
    with pytest.raises(ConfigError):
        sched.ScheduleSpec(anchors=[
            (0, sched.LossWeights(1, 0, 0)),
            (10, sched.LossWeights(1, 0, 0)),
            (10, sched.LossWeights(1, 0, 0)),
        ])
    with pytest.raises(ConfigError):
        sched.ScheduleSpec(anchors=[(5, sched.LossWeights(1, 0, 0))])


def test_negative_weights_rejected():
    with pytest.raises(ConfigError):
        sched.LossWeights(1.0, -0.5, 0.0)
    with pytest.raises(ConfigError):
        sched.LossWeights(0.0, 0.0, 0.0)


# ---------------------------------------------------------------- total loss

def test_total_loss_projections():
    l_qa = T.tensor([2.0])
    l_ma = T.tensor([3.0])
    l_tl = T.tensor([-1.0])
    assert sched.total_loss(l_qa, l_ma, l_tl, sched.LossWeights(1, 0, 0)).item() == 2.0
    assert sched.total_loss(l_qa, l_ma, l_tl, sched.LossWeights(0, 0, 1)).item() == -1.0


def test_total_loss_matches_scalar_arithmetic():
    rng = np.random.default_rng(0)
    for _ in range(25):
        vals = rng.uniform(-2, 2, size=3)
        w = rng.uniform(0, 2, size=3)
        if w.max() == 0:
            continue
        out = sched.total_loss(T.tensor([vals[0]], dtype=np.float64),
                               T.tensor([vals[1]], dtype=np.float64),
                               T.tensor([vals[2]], dtype=np.float64),
                               sched.LossWeights(*w))
        assert out.item() == pytest.approx(float((vals * w).sum()), abs=1e-12)


def test_total_loss_gradient_scales_by_alpha():
    # dL/dtheta under weights c*alpha equals c times dL/dtheta under alpha
    def run(alpha_scale):
        x = T.tensor([1.5], requires_grad=True, dtype=np.float64)
        l_qa = T.mul(x, x)
        l_ma = T.scale(x, 3.0)
        w = sched.LossWeights(0.5 * alpha_scale, 0.25 * alpha_scale, 0.0)
        sched.total_loss(l_qa, l_ma, None, w).backward()
        return x.grad.copy()

    np.testing.assert_allclose(run(4.0), 4.0 * run(1.0), rtol=1e-12)


def test_total_loss_requires_zero_weight_for_missing_terms():
    with pytest.raises(ConfigError):
        sched.total_loss(T.tensor([1.0]), None, None, sched.LossWeights(1.0, 0.5, 0.0))
    out = sched.total_loss(T.tensor([1.0]), None, None, sched.LossWeights(1.0, 0.0, 0.0))
    assert out.item() == 1.0
