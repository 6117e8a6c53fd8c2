import numpy as np
import pytest

from mtvqa import encoders as enc
from mtvqa import tensor as T


def fd_grad(f, x, h=1e-3):
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def rel_err(a, n):
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    return 0.0 if denom < 1e-6 else np.abs(a - n).max() / denom


def make_params(seed, in_dim, d, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return enc.init_lstm_params(rng, in_dim, d, dtype=dtype)


# ---------------------------------------------------------------- embedding

def test_embed_empty_sequence():
    table = T.tensor(np.zeros((7, 4)))
    out = enc.embed_tokens([], table)
    assert out.shape == (0, 4)


def test_embed_repeated_id_identical_rows():
    rng = np.random.default_rng(0)
    table = T.tensor(rng.normal(size=(7, 4)))
    out = enc.embed_tokens([3, 3, 3], table)
    assert np.array_equal(out.data[0], out.data[1])
    assert np.array_equal(out.data[1], out.data[2])


def test_embed_out_of_range_names_id():
    table = T.tensor(np.zeros((7, 4)))
    with pytest.raises(enc.TokenRangeError, match="9"):
        enc.embed_tokens([1, 9], table)


def test_embed_gradient_counts_lookups():
    rng = np.random.default_rng(1)
    table = T.tensor(rng.normal(size=(5, 3)), requires_grad=True, dtype=np.float64)
    out = enc.embed_tokens([2, 2, 4], table)
    T.sum_all(out).backward()
    expect = np.zeros((5, 3))
    expect[2] = 2.0
    expect[4] = 1.0
    np.testing.assert_array_equal(table.grad, expect)


def test_embed_gradient_matches_fd():
    rng = np.random.default_rng(2)
    tv = rng.uniform(-1, 1, size=(5, 3))
    ids = [0, 2, 2, 4, 1]
    w = rng.normal(size=(3, 1))
    table = T.tensor(tv, requires_grad=True, dtype=np.float64)
    out = T.sum_all(T.matmul(enc.embed_tokens(ids, table), T.tensor(w, dtype=np.float64)))
    out.backward()
    num = fd_grad(lambda: float((tv[ids] @ w).sum()), tv)
    assert rel_err(table.grad, num) < 1e-4


# ---------------------------------------------------------------- video projection

def test_project_video_zero_params_gives_zeros():
    v = T.tensor(np.random.default_rng(3).normal(size=(4, 6)))
    out = enc.project_video(v, T.zeros((6, 5)), T.zeros((5,)))
    np.testing.assert_array_equal(out.data, np.zeros((4, 5)))


def test_project_video_bounded():
    rng = np.random.default_rng(4)
    v = T.tensor(rng.normal(scale=50, size=(4, 6)))
    w = T.tensor(rng.normal(size=(6, 5)))
    b = T.tensor(rng.normal(size=(5,)))
    out = enc.project_video(v, w, b)
    # tanh rounds to exactly +-1.0 at saturation in float arithmetic
    assert np.all(out.data >= -1.0) and np.all(out.data <= 1.0)


def test_project_video_gradcheck():
    rng = np.random.default_rng(5)
    vv = rng.uniform(-2, 2, size=(3, 4))
    wv = rng.uniform(-1, 1, size=(4, 2))
    bv = rng.uniform(-1, 1, size=(2,))
    w = T.tensor(wv, requires_grad=True, dtype=np.float64)
    b = T.tensor(bv, requires_grad=True, dtype=np.float64)
    out = enc.project_video(T.tensor(vv, dtype=np.float64), w, b)
    T.sum_all(T.mul(out, out)).backward()

    def f():
        y = np.tanh(vv @ wv + bv)
        return float((y * y).sum())

    assert rel_err(w.grad, fd_grad(f, wv)) < 1e-4
    assert rel_err(b.grad, fd_grad(f, bv)) < 1e-4


def test_project_video_dimension_error():
    with pytest.raises(T.ShapeError):
        enc.project_video(T.zeros((3, 4)), T.zeros((5, 2)), T.zeros((2,)))


# ---------------------------------------------------------------- bi-LSTM

def test_bilstm_shapes_and_determinism():
    params = make_params(6, in_dim=5, d=4)
    x = T.tensor(np.random.default_rng(7).normal(size=(9, 5)), dtype=np.float64)
    h1 = enc.bilstm_encode(x, params)
    h2 = enc.bilstm_encode(x, params)
    assert h1.shape == (9, 8)
    assert np.array_equal(h1.data, h2.data)


def test_bilstm_outputs_bounded():
    # h = o * tanh(c) with o in (0,1): outputs stay inside (-1, 1)
    params = make_params(8, in_dim=3, d=4)
    x = T.tensor(np.random.default_rng(9).normal(scale=10, size=(20, 3)), dtype=np.float64)
    h = enc.bilstm_encode(x, params)
    assert np.all(np.abs(h.data) < 1.0)


def test_bilstm_single_step_uses_zero_initial_state():
    params = make_params(10, in_dim=3, d=2)
    x = np.random.default_rng(11).normal(size=(1, 3))
    h = enc.bilstm_encode(T.tensor(x, dtype=np.float64), params)

    def one_step(direction):
        z = x[0] @ direction.w_ih.data + direction.b.data
        d = 2
        gi = 1 / (1 + np.exp(-z[:d]))
        gf = 1 / (1 + np.exp(-z[d:2 * d]))
        gg = np.tanh(z[2 * d:3 * d])
        go = 1 / (1 + np.exp(-z[3 * d:]))
        return go * np.tanh(gi * gg)

    np.testing.assert_allclose(h.data[0, :2], one_step(params.forward), rtol=1e-12)
    np.testing.assert_allclose(h.data[0, 2:], one_step(params.backward), rtol=1e-12)


def test_bilstm_reversal_swaps_direction_roles():
    # forward half on x == backward half on reversed x, read in reverse
    params = make_params(12, in_dim=4, d=3)
    xv = np.random.default_rng(13).normal(size=(6, 4))
    h_fwd = enc.lstm_sequence(T.tensor(xv, dtype=np.float64), params.forward, steps=6)
    h_rev = enc.lstm_sequence(T.tensor(xv[::-1].copy(), dtype=np.float64), params.forward, steps=6, reverse=True)
    np.testing.assert_allclose(h_fwd.data, h_rev.data[::-1], rtol=1e-12)


def test_bilstm_empty_errors():
    params = make_params(14, in_dim=3, d=2)
    with pytest.raises(T.EmptySequenceError):
        enc.bilstm_encode(T.zeros((0, 3)), params)


def test_bilstm_gradcheck_three_steps():
    params = make_params(15, in_dim=3, d=2, dtype=np.float64)
    rng = np.random.default_rng(16)
    xv = rng.uniform(-2, 2, size=(3, 3))
    x = T.tensor(xv, requires_grad=True, dtype=np.float64)
    out = enc.bilstm_encode(x, params)
    T.sum_all(T.mul(out, out)).backward()

    def run():
        h = enc.bilstm_encode(T.tensor(xv, dtype=np.float64), params)
        return float((h.data ** 2).sum())

    for name, t in [("x", x),
                    ("w_ih_f", params.forward.w_ih), ("w_hh_f", params.forward.w_hh),
                    ("b_f", params.forward.b),
                    ("w_ih_b", params.backward.w_ih), ("w_hh_b", params.backward.w_hh),
                    ("b_b", params.backward.b)]:
        num = fd_grad(lambda: run(), t.data)
        assert rel_err(t.grad, num) < 1e-4, name
        t.zero_grad()


def test_bilstm_batch_matches_per_sequence():
    params = make_params(17, in_dim=4, d=3)
    rng = np.random.default_rng(18)
    seqs = [rng.normal(size=(5, 4)) for _ in range(3)]
    packed = T.tensor(np.concatenate(seqs, axis=0), dtype=np.float64)
    batched = enc.bilstm_batch(packed, params, steps=5)
    for i, s in enumerate(seqs):
        single = enc.bilstm_encode(T.tensor(s, dtype=np.float64), params)
        np.testing.assert_allclose(batched.data[i * 5:(i + 1) * 5], single.data, atol=1e-12)


def test_bilstm_batch_gradient_matches_fd():
    params = make_params(19, in_dim=3, d=2, dtype=np.float64)
    rng = np.random.default_rng(20)
    xv = rng.uniform(-1, 1, size=(8, 3))  # 2 sequences of 4 steps
    x = T.tensor(xv, requires_grad=True, dtype=np.float64)
    out = enc.bilstm_batch(x, params, steps=4)
    T.sum_all(T.mul(out, out)).backward()

    def f():
        h = enc.bilstm_batch(T.tensor(xv, dtype=np.float64), params, steps=4)
        return float((h.data ** 2).sum())

    assert rel_err(x.grad, fd_grad(f, xv)) < 1e-4


def test_forget_gate_bias_initialised_to_one():
    params = make_params(21, in_dim=3, d=4)
    for direction in (params.forward, params.backward):
        np.testing.assert_array_equal(direction.b.data[4:8], np.ones(4))
