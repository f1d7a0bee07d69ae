from __future__ import annotations

import numpy as np
import pytest

from kdflow.tensor import ShapeError, Tape, TapeError, Tensor, make_rng


def fd_check(build, params: dict[str, np.ndarray], step=1e-3, tol=1e-3):
    """Central differences of ``build`` (a scalar-loss tape builder) vs backward."""
    tape = Tape()
    slots = {k: tape.leaf(Tensor(v)) for k, v in params.items()}
    loss = build(tape, slots)
    grads = tape.backward(loss)

    def value(p):
        t = Tape(record=False)
        s = {k: t.const(Tensor(v)) for k, v in p.items()}
        return float(t.value(build(t, s)).data.reshape(-1)[0])

    for name, arr in params.items():
        fd = np.zeros(arr.shape, np.float64)
        for idx in np.ndindex(*arr.shape):
            plus, minus = {k: v.copy() for k, v in params.items()}, {k: v.copy() for k, v in params.items()}
            plus[name][idx] += step
            minus[name][idx] -= step
            fd[idx] = (value(plus) - value(minus)) / (2 * step)
        g = grads[slots[name]].data.astype(np.float64)
        err = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
        assert err < tol, f"{name}: relative error {err:.2e}"


def test_sum_gives_ones():
    tape = Tape()
    x = tape.leaf(Tensor(np.arange(6, dtype=np.float32).reshape(2, 3)))
    g = tape.backward(tape.total(x))[x].data
    assert np.array_equal(g, np.ones((2, 3), np.float32))


def test_half_square_gives_identity():
    vals = np.array([1.5, -2.0, 3.25], np.float32)
    tape = Tape()
    x = tape.leaf(Tensor(vals))
    loss = tape.scale(tape.total(tape.mul(x, x)), 0.5)
    assert np.array_equal(tape.backward(loss)[x].data, vals)


def test_fan_out_gradients_sum():
    tape = Tape()
    x = tape.leaf(Tensor(np.array([2.0], np.float32)))
    y = tape.add(tape.mul(x, x), x)  # x^2 + x
    assert tape.backward(tape.total(y))[x].data[0] == 5.0


def test_non_scalar_loss_rejected():
    tape = Tape()
    x = tape.leaf(Tensor(np.ones(3, np.float32)))
    with pytest.raises(TapeError):
        tape.backward(tape.mul(x, x))


def test_seed_shape_checked():
    tape = Tape()
    x = tape.leaf(Tensor(np.ones(3, np.float32)))
    with pytest.raises(ShapeError):
        tape.backward(tape.mul(x, x), seed=np.ones(4, np.float32))


def test_inference_tape_has_no_backward():
    tape = Tape(record=False)
    x = tape.leaf(Tensor(np.ones(3, np.float32)))
    loss = tape.total(x)
    assert not tape.ops
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_visits_ops_in_reverse():
    tape = Tape()
    x = tape.leaf(Tensor(np.ones(2, np.float32)))
    tape.total(tape.mul(tape.add(x, x), x))
    seen = []
    for op in tape.ops:
        fn = op.backward

        def spy(g, fn=fn, name=op.name):
            seen.append(name)
            return fn(g)

        op.backward = spy
    tape.backward(len(tape.values) - 1)
    assert seen == [op.name for op in reversed(tape.ops)]


def _mlp(tape, s):
    h = tape.gelu(tape.linear(s["x"], s["w1"]))
    y = tape.linear(h, s["w2"])
    return tape.scale(tape.total(tape.mul(y, y)), 0.5)


@pytest.mark.parametrize("seed", range(20))
def test_two_layer_mlp_matches_finite_differences(seed):
    rng = make_rng(seed, 99)
    params = {
        "x": rng.uniform(-2, 2, (3, 5)).astype(np.float32),
        "w1": rng.uniform(-1, 1, (5, 6)).astype(np.float32),
        "w2": rng.uniform(-1, 1, (6, 2)).astype(np.float32),
    }
    fd_check(_mlp, params)


def _attention_block(tape, s):
    x = tape.rmsnorm(s["x"], s["g"])
    q = tape.split_heads(tape.linear(x, s["wq"]), 2)
    k = tape.split_heads(tape.linear(x, s["wk"]), 2)
    a = tape.softmax(tape.scale(tape.matmul(q, tape.transpose(k)), 0.5), causal=True)
    o = tape.merge_heads(tape.matmul(a, q))
    return tape.total(tape.mul(o, s["t"]))


@pytest.mark.parametrize("seed", range(5))
def test_attention_primitives_match_finite_differences(seed):
    rng = make_rng(seed, 7)
    params = {
        "x": rng.uniform(-1, 1, (1, 4, 4)).astype(np.float32),
        "g": rng.uniform(0.5, 1.5, (4,)).astype(np.float32),
        "wq": rng.uniform(-1, 1, (4, 4)).astype(np.float32),
        "wk": rng.uniform(-1, 1, (4, 4)).astype(np.float32),
        "t": rng.uniform(-1, 1, (1, 4, 4)).astype(np.float32),
    }
    fd_check(_attention_block, params)


def test_embedding_gather_gradient_scatters():
    rng = make_rng(3)
    table = rng.standard_normal((5, 3)).astype(np.float32)
    ids = np.array([[1, 1, 4]])
    tape = Tape()
    t = tape.leaf(Tensor(table))
    g = tape.backward(tape.total(tape.embedding(ids, t)))[t].data
    assert g[1].tolist() == [2, 2, 2] and g[4].tolist() == [1, 1, 1] and not g[[0, 2, 3]].any()
