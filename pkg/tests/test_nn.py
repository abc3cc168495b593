import numpy as np
import pytest

from kgperturb.nn import (
    LstmCell,
    Mlp,
    ParamBlock,
    ShapeError,
    UpdateError,
    adam_step,
    dump_blocks,
    finite_diff_check,
    load_blocks,
    log_sigmoid,
    sigmoid,
    zero_grad,
)


def test_identity_mlp():
    mlp = Mlp([2, 2])
    mlp.weights[0].value = np.eye(2)
    y, _ = mlp.forward([1.0, 2.0])
    assert np.array_equal(y, [1.0, 2.0])


def test_hidden_rectifier_zeroes_negative():
    mlp = Mlp([2, 2, 2])
    mlp.weights[0].value = np.diag([-1.0, 1.0])
    mlp.weights[1].value = np.eye(2)
    y, tape = mlp.forward([1.0, 2.0])
    assert np.array_equal(tape[0][1], [-1.0, 2.0])
    assert np.array_equal(y, [0.0, 2.0])


def test_zero_mlp():
    mlp = Mlp([3, 4, 2])
    for b in mlp.params:
        b.value[...] = 0
    assert np.array_equal(mlp([5.0, -1.0, 2.0]), np.zeros(2))


def test_mlp_width_mismatch():
    with pytest.raises(ShapeError):
        Mlp([3, 2]).forward(np.ones(2))
    mlp = Mlp([3, 2])
    _, tape = mlp.forward(np.ones(3))
    with pytest.raises(ShapeError):
        mlp.backward(tape, np.ones(3))


def test_lstm_zero_weights_closed_form():
    cell = LstmCell(3, 2)
    for b in cell.params:
        b.value[...] = 0
    h, c, _ = cell.forward(np.ones(3), np.zeros(2), np.zeros(2))
    assert np.array_equal(h, np.zeros(2)) and np.array_equal(c, np.zeros(2))
    v = np.array([0.7, -2.0])
    h, c, _ = cell.forward(np.ones(3), np.ones(2), v)
    np.testing.assert_allclose(c, 0.5 * v, rtol=0, atol=1e-15)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * v), rtol=0, atol=1e-15)


def test_lstm_deterministic():
    cell = LstmCell(3, 4, np.random.default_rng(3))
    x, h0, c0 = np.arange(3.0), np.ones(4) * 0.1, np.ones(4) * -0.2
    a = cell.forward(x, h0, c0)
    b = cell.forward(x, h0, c0)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_square_gradient():
    p = ParamBlock("x", [3.0])
    p.grad += 2 * p.value
    assert p.grad[0] == 6.0
    res = finite_diff_check(lambda: float(p.value[0] ** 2), [p])
    assert res.passed and res.worst_rel_err < 1e-8


def test_shared_parameter_accumulates():
    rng = np.random.default_rng(0)
    mlp = Mlp([3, 2], rng)
    x1, x2 = rng.normal(size=3), rng.normal(size=3)
    y1, t1 = mlp.forward(x1)
    y2, t2 = mlp.forward(x2)
    mlp.backward(t1, np.ones(2))
    mlp.backward(t2, np.ones(2))
    np.testing.assert_allclose(mlp.weights[0].grad, np.outer(x1, np.ones(2)) + np.outer(x2, np.ones(2)))


def _mlp_logistic_problem(seed):
    rng = np.random.default_rng(seed)
    mlp = Mlp([4, 5, 1], rng)
    for b in mlp.biases:
        b.value = rng.normal(scale=0.3, size=b.shape)
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 2, size=6).astype(float)

    def loss():
        z = mlp(x)[:, 0]
        return -np.mean(y * log_sigmoid(z) + (1 - y) * log_sigmoid(-z))

    zero_grad(mlp.params)
    z, tape = mlp.forward(x)
    dz = ((sigmoid(z[:, 0]) - y) / len(y))[:, None]
    mlp.backward(tape, dz)
    return mlp, loss


@pytest.mark.parametrize("seed", range(5))
def test_mlp_gradient_finite_differences(seed):
    mlp, loss = _mlp_logistic_problem(seed)
    res = finite_diff_check(loss, mlp.params, rng=np.random.default_rng(seed))
    assert res.passed, res


@pytest.mark.parametrize("seed", range(5))
def test_lstm_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cell = LstmCell(3, 4, rng)
    cell.b.value = rng.normal(scale=0.3, size=cell.b.shape)
    xs = rng.normal(size=(5, 2, 3))
    w = rng.normal(size=(2, 4))

    def run():
        h, c = np.zeros((2, 4)), np.zeros((2, 4))
        tapes = []
        for x in xs:
            h, c, tape = cell.forward(x, h, c)
            tapes.append(tape)
        return h, tapes

    def loss():
        return float(np.sum(w * run()[0]))

    zero_grad(cell.params)
    _, tapes = run()
    dh, dc = w, None
    for tape in reversed(tapes):
        _, dh, dc = cell.backward(tape, dh, dc)
    res = finite_diff_check(loss, cell.params, rng=rng)
    assert res.passed, res


def test_corrupted_gradient_detected():
    mlp, loss = _mlp_logistic_problem(0)
    for b in mlp.params:
        b.grad *= -1
    assert not finite_diff_check(loss, mlp.params).passed


def test_quadratic_bowl():
    p = ParamBlock("p", np.random.default_rng(1).normal(size=10))
    p.grad += 2 * p.value
    assert finite_diff_check(lambda: float(np.sum(p.value ** 2)), [p]).worst_rel_err < 1e-8


def test_adam_first_step():
    p = ParamBlock("p", [0.0])
    p.grad[...] = 1.0
    adam_step([p], 0.1)
    assert p.value[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert p.grad[0] == 1.0


def test_adam_zero_gradient_and_zero_lr():
    p = ParamBlock("p", [1.5, -2.0])
    for _ in range(5):
        adam_step([p], 0.1)
    assert np.array_equal(p.value, [1.5, -2.0])
    p.grad[...] = 3.0
    adam_step([p], 0.0)
    assert np.array_equal(p.value, [1.5, -2.0])


def test_adam_rejects_nonfinite():
    p = ParamBlock("p", [1.0])
    p.grad[...] = np.nan
    with pytest.raises(UpdateError):
        adam_step([p], 0.1)


def test_adam_deterministic():
    def run():
        mlp, _ = _mlp_logistic_problem(2)
        for _ in range(3):
            adam_step(mlp.params, 0.01)
        return [b.value.tobytes() for b in mlp.params]

    assert run() == run()


def test_block_dump_round_trip():
    mlp = Mlp([3, 4, 2], np.random.default_rng(0))
    lines = dump_blocks(mlp.params)
    other = Mlp([3, 4, 2], np.random.default_rng(9))
    assert load_blocks(lines, other.params) == len(lines)
    assert dump_blocks(other.params) == lines
