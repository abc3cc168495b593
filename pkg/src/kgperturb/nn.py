"""Small numpy differentiable substrate: parameter blocks, MLP and LSTM cells
with hand-written backward passes, Adam/SGD updates and a finite-difference
gradient checker.

Forward passes return a ``tape`` holding whatever the matching ``backward``
needs. Backward passes *accumulate* into ``ParamBlock.grad``; callers zero
gradients between optimisation steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class UpdateError(ArithmeticError):
    pass


class ParamBlock:
    def __init__(self, name: str, value):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)
        self.step = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def copy(self) -> ParamBlock:
        out = ParamBlock(self.name, self.value.copy())
        return out

    def __repr__(self) -> str:
        return f"ParamBlock({self.name!r}, shape={self.shape})"


def zero_grad(blocks: Iterable[ParamBlock]) -> None:
    for b in blocks:
        b.zero_grad()


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


class Mlp:
    """Fully connected stack: rectifier on hidden layers, identity on output.

    ``widths`` is ``[in, hidden..., out]``. Inputs may be a vector or a
    ``(batch, in)`` matrix.
    """

    def __init__(self, widths: Sequence[int], rng: np.random.Generator | None = None,
                 name: str = "mlp", zero_output: bool = False):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ShapeError(f"invalid MLP widths {widths}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = widths
        self.weights: list[ParamBlock] = []
        self.biases: list[ParamBlock] = []
        n_layers = len(widths) - 1
        for i in range(n_layers):
            fan_in, fan_out = widths[i], widths[i + 1]
            if zero_output and i == n_layers - 1:
                w = np.zeros((fan_in, fan_out))
            else:
                w = uniform_init(rng, (fan_in, fan_out), fan_in)
            self.weights.append(ParamBlock(f"{name}.W{i}", w))
            self.biases.append(ParamBlock(f"{name}.b{i}", np.zeros(fan_out)))

    @property
    def params(self) -> list[ParamBlock]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.widths[0]:
            raise ShapeError(f"input width {x.shape[-1]} != {self.widths[0]}")
        tape = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w.value + b.value
            tape.append((h, pre))
            h = pre if i == last else np.maximum(pre, 0.0)
        return h, tape

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape, dy):
        dy = np.asarray(dy, dtype=np.float64)
        last = len(self.weights) - 1
        if dy.shape != tape[last][1].shape:
            raise ShapeError(f"upstream gradient shape {dy.shape} != {tape[last][1].shape}")
        g = dy
        for i in range(last, -1, -1):
            inp, pre = tape[i]
            if i != last:
                g = g * (pre > 0)
            w, b = self.weights[i], self.biases[i]
            if inp.ndim == 1:
                w.grad += np.outer(inp, g)
                b.grad += g
            else:
                w.grad += inp.T @ g
                b.grad += g.sum(axis=0)
            g = g @ w.value.T
        return g


def mlp_forward(mlp: Mlp, x):
    return mlp.forward(x)


class LstmCell:
    """Standard LSTM cell; gate order in the fused weight matrix is i, f, o, g."""

    def __init__(self, input_width: int, hidden_width: int,
                 rng: np.random.Generator | None = None, name: str = "lstm"):
        if input_width <= 0 or hidden_width <= 0:
            raise ShapeError("LSTM widths must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_width = input_width
        self.hidden_width = hidden_width
        fan_in = input_width + hidden_width
        self.W = ParamBlock(f"{name}.W", uniform_init(rng, (fan_in, 4 * hidden_width), fan_in))
        self.b = ParamBlock(f"{name}.b", np.zeros(4 * hidden_width))

    @property
    def params(self) -> list[ParamBlock]:
        return [self.W, self.b]

    def forward(self, x, h_prev, c_prev):
        x = np.asarray(x, dtype=np.float64)
        h_prev = np.asarray(h_prev, dtype=np.float64)
        c_prev = np.asarray(c_prev, dtype=np.float64)
        H = self.hidden_width
        if x.shape[-1] != self.input_width or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
            raise ShapeError("LSTM input/state width mismatch")
        xh = np.concatenate([x, h_prev], axis=-1)
        z = xh @ self.W.value + self.b.value
        i = sigmoid(z[..., :H])
        f = sigmoid(z[..., H:2 * H])
        o = sigmoid(z[..., 2 * H:3 * H])
        g = np.tanh(z[..., 3 * H:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        tape = (xh, c_prev, i, f, o, g, tc)
        return h, c, tape

    def backward(self, tape, dh, dc=None):
        xh, c_prev, i, f, o, g, tc = tape
        dh = np.asarray(dh, dtype=np.float64)
        if dh.shape != i.shape:
            raise ShapeError(f"upstream gradient shape {dh.shape} != {i.shape}")
        dc_total = dh * o * (1.0 - tc ** 2)
        if dc is not None:
            dc_total = dc_total + dc
        do = dh * tc
        di = dc_total * g
        dg = dc_total * i
        df = dc_total * c_prev
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g ** 2),
        ], axis=-1)
        if xh.ndim == 1:
            self.W.grad += np.outer(xh, dz)
            self.b.grad += dz
        else:
            self.W.grad += xh.T @ dz
            self.b.grad += dz.sum(axis=0)
        dxh = dz @ self.W.value.T
        dx = dxh[..., :self.input_width]
        dh_prev = dxh[..., self.input_width:]
        dc_prev = dc_total * f
        return dx, dh_prev, dc_prev


def lstm_cell_forward(cell: LstmCell, x, h_prev, c_prev):
    return cell.forward(x, h_prev, c_prev)


def adam_step(blocks: Iterable[ParamBlock], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update. Gradients are left in place."""
    blocks = list(blocks)
    for b in blocks:
        if not np.all(np.isfinite(b.grad)):
            raise UpdateError(f"non-finite gradient in {b.name}")
    for b in blocks:
        b.step += 1
        b.m = beta1 * b.m + (1.0 - beta1) * b.grad
        b.v = beta2 * b.v + (1.0 - beta2) * b.grad ** 2
        m_hat = b.m / (1.0 - beta1 ** b.step)
        v_hat = b.v / (1.0 - beta2 ** b.step)
        b.value = b.value - lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(blocks: Iterable[ParamBlock], lr: float) -> None:
    blocks = list(blocks)
    for b in blocks:
        if not np.all(np.isfinite(b.grad)):
            raise UpdateError(f"non-finite gradient in {b.name}")
    for b in blocks:
        b.step += 1
        b.value = b.value - lr * b.grad


@dataclass
class GradCheck:
    passed: bool
    worst_rel_err: float
    n_checked: int


def finite_diff_check(fn: Callable[[], float], blocks: Sequence[ParamBlock], tol: float = 1e-4,
                      step: float = 1e-4, max_coords: int = 64,
                      rng: np.random.Generator | None = None, floor: float = 1e-5) -> GradCheck:
    """Compare the gradients already stored in ``blocks`` with central differences.

    ``fn`` re-evaluates the scalar loss from the current block values. Up to
    ``max_coords`` coordinates are sampled across all blocks. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    coords = [(bi, j) for bi, b in enumerate(blocks) for j in range(b.value.size)]
    if len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    worst = 0.0
    for bi, j in coords:
        b = blocks[bi]
        flat = b.value.reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        f_plus = float(fn())
        flat[j] = orig - step
        f_minus = float(fn())
        flat[j] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = float(b.grad.reshape(-1)[j])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, rel)
    return GradCheck(passed=worst < tol, worst_rel_err=worst, n_checked=len(coords))


def copy_values(src: Sequence[ParamBlock], dst: Sequence[ParamBlock]) -> None:
    for s, d in zip(src, dst):
        if s.shape != d.shape:
            raise ShapeError(f"cannot copy {s.name} {s.shape} into {d.name} {d.shape}")
        d.value = s.value.copy()


def format_float(x: float) -> str:
    s = f"{x:.9f}"
    return "0.000000000" if s == "-0.000000000" else s


def dump_blocks(blocks: Sequence[ParamBlock]) -> list[str]:
    """One header line per block (``name shape``) followed by one row per leading index."""
    lines = []
    for b in blocks:
        shape = "x".join(str(s) for s in b.shape)
        lines.append(f"block\t{b.name}\t{shape}")
        arr = b.value.reshape(b.shape[0], -1) if b.value.ndim > 1 else b.value.reshape(1, -1)
        for row in arr:
            lines.append("\t".join(format_float(v) for v in row))
    return lines


def load_blocks(lines: Sequence[str], blocks: Sequence[ParamBlock]) -> int:
    """Fill ``blocks`` in order from ``dump_blocks`` output; returns lines consumed."""
    pos = 0
    for b in blocks:
        head = lines[pos].split("\t")
        pos += 1
        if head[0] != "block" or head[1] != b.name:
            raise ValueError(f"expected block {b.name}, found {lines[pos - 1]!r}")
        shape = tuple(int(s) for s in head[2].split("x"))
        if shape != b.shape:
            raise ShapeError(f"block {b.name}: checkpoint shape {shape} != {b.shape}")
        n_rows = shape[0] if len(shape) > 1 else 1
        rows = [[float(v) for v in lines[pos + k].split("\t")] for k in range(n_rows)]
        pos += n_rows
        b.value = np.array(rows, dtype=np.float64).reshape(shape)
    return pos
