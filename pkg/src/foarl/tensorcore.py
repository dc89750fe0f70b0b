"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

A :class:`Tape` records every primitive as it is evaluated. ``backward`` walks
the record in exact reverse order and accumulates gradients into per-node
slots. Only the primitives the dual-head network needs are provided.

Parameters live in a :class:`ParamVector`: named tensors that are views into
one flat buffer, so a whole network can be copied, shared between processes
or written to a checkpoint in one go.
"""
from __future__ import annotations

import struct
from collections.abc import Callable, Mapping, Sequence
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ContractViolation",
    "InvalidShape",
    "InvalidCheckpoint",
    "Node",
    "Tape",
    "ParamVector",
    "backward",
    "finite_diff_check",
    "conv2d",
    "affine",
    "lstm_cell",
    "softmax",
    "relu",
    "tanh",
    "sigmoid",
    "add",
    "mul",
    "log",
    "sum_",
    "scale",
    "reshape",
    "take",
    "save_checkpoint",
    "load_checkpoint",
]


class InvalidShape(ValueError):
    pass


class ContractViolation(RuntimeError):
    pass


class InvalidCheckpoint(ValueError):
    pass


class Node:
    __slots__ = ("id", "tape", "value", "grad", "requires_grad", "name")

    def __init__(self, tape: "Tape", id: int, value: np.ndarray, requires_grad: bool, name: str | None = None):
        self.tape = tape
        self.id = id
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node(id={self.id}{label}, shape={self.value.shape})"


class Tape:
    """Ordered record of primitive evaluations.

    Nodes get consecutive ids in creation order, so every operation's inputs
    precede it. Operations whose inputs are all constants are not recorded.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.ops: list[tuple[Node, tuple[Node, ...], Callable]] = []
        self.params: dict[str, Node] = {}

    def _new(self, value, requires_grad: bool, name: str | None = None) -> Node:
        node = Node(self, len(self.nodes), value, requires_grad, name)
        self.nodes.append(node)
        return node

    def leaf(self, value, name: str | None = None) -> Node:
        return self._new(np.asarray(value, dtype=np.float64), True, name)

    def constant(self, value) -> Node:
        return self._new(np.asarray(value, dtype=np.float64), False)

    def watch(self, params: "ParamVector") -> dict[str, Node]:
        """Register every tensor of ``params`` as a named leaf (no copy)."""
        for name in params.names:
            if name in self.params:
                raise ContractViolation(f"parameter {name!r} already on tape")
            self.params[name] = self._new(params[name], True, name)
        return self.params

    def record(self, value: np.ndarray, inputs: Sequence[Node], backward_fn: Callable) -> Node:
        needs = tuple(n.requires_grad for n in inputs)
        node = self._new(value, any(needs))
        if node.requires_grad:
            self.ops.append((node, tuple(inputs), backward_fn))
        return node


class _Outer:
    """Sum of outer products ``sum_i left_i (x) right_i`` kept in factored form.

    Weight gradients of an unrolled rollout are one outer product per step;
    stacking the factors turns their sum into a single matrix product.
    """

    __slots__ = ("left", "right")

    def __init__(self, left: np.ndarray, right: np.ndarray):
        self.left = [left]
        self.right = [right]

    def dense(self) -> np.ndarray:
        if len(self.left) == 1:
            return np.outer(self.left[0], self.right[0])
        return np.stack(self.left, axis=1) @ np.stack(self.right, axis=0)


def _dense(g):
    return g.dense() if isinstance(g, _Outer) else g


def _accumulate(prev, g):
    if prev is None:
        return g
    if isinstance(prev, _Outer) and isinstance(g, _Outer):
        prev.left.extend(g.left)
        prev.right.extend(g.right)
        return prev
    return _dense(prev) + _dense(g)


def backward(tape: Tape, loss: Node, params: "ParamVector | None" = None) -> np.ndarray | None:
    """Reverse sweep from a scalar ``loss``.

    Fills ``node.grad`` for every leaf on the tape (zeros when the loss does
    not depend on it). When ``params`` is given, also returns a flat gradient
    array aligned with ``params.flat``.
    """
    if loss.value.size != 1:
        raise ContractViolation(f"loss must be scalar, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for out, inputs, fn in reversed(tape.ops):
        g = grads.pop(out.id, None)
        if g is None:
            continue
        needs = tuple(n.requires_grad for n in inputs)
        for node, gin in zip(inputs, fn(_dense(g), needs)):
            if gin is None or not node.requires_grad:
                continue
            grads[node.id] = _accumulate(grads.get(node.id), gin)
    for node in tape.nodes:
        if node.requires_grad:
            g = grads.get(node.id)
            node.grad = np.zeros_like(node.value) if g is None else _dense(g)
    if params is None:
        return None
    flat = np.zeros_like(params.flat)
    for name, node in tape.params.items():
        sl = params.slice_of(name)
        flat[sl] = node.grad.reshape(-1)
    return flat


# --------------------------------------------------------------------------
# primitives


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise InvalidShape(msg)


def conv2d(x: Node, w: Node, b: Node, stride: int) -> Node:
    """Valid cross-correlation of a (C, H, W) input with (O, C, kh, kw) kernels."""
    xv, wv, bv = x.value, w.value, b.value
    _check(xv.ndim == 3 and wv.ndim == 4, "conv2d expects input (C,H,W) and kernels (O,C,kh,kw)")
    c_in, height, width = xv.shape
    c_out, wc, kh, kw = wv.shape
    _check(wc == c_in, f"kernel channels {wc} != input channels {c_in}")
    _check(bv.shape == (c_out,), f"bias shape {bv.shape} != ({c_out},)")
    _check(kh <= height and kw <= width, "kernel larger than input")
    _check(stride >= 1, "stride must be positive")
    ho = (height - kh) // stride + 1
    wo = (width - kw) // stride + 1
    win = sliding_window_view(xv, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c_in * kh * kw)
    wf = wv.reshape(c_out, -1)
    out = (wf @ cols.T).reshape(c_out, ho, wo) + bv[:, None, None]

    def back(g, needs):
        g2 = g.reshape(c_out, -1)
        dx = dw = db = None
        if needs[0]:
            dcols = (g2.T @ wf).reshape(ho, wo, c_in, kh, kw)
            dx = np.zeros_like(xv)
            hs = stride * (ho - 1) + 1
            ws = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    dx[:, i:i + hs:stride, j:j + ws:stride] += dcols[:, :, :, i, j].transpose(2, 0, 1)
        if needs[1]:
            dw = (g2 @ cols).reshape(wv.shape)
        if needs[2]:
            db = g2.sum(axis=1)
        return dx, dw, db

    return x.tape.record(out, (x, w, b), back)


def affine(x: Node, w: Node, b: Node) -> Node:
    """``w @ x + b`` for a vector x."""
    xv, wv, bv = x.value, w.value, b.value
    _check(xv.ndim == 1 and wv.ndim == 2, "affine expects vector input and matrix weights")
    _check(wv.shape[1] == xv.shape[0], f"weights {wv.shape} do not match input {xv.shape}")
    _check(bv.shape == (wv.shape[0],), f"bias shape {bv.shape} != ({wv.shape[0]},)")
    out = wv @ xv + bv

    def back(g, needs):
        return (
            wv.T @ g if needs[0] else None,
            _Outer(g, xv) if needs[1] else None,
            g if needs[2] else None,
        )

    return x.tape.record(out, (x, w, b), back)


def _sig(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_cell(x: Node, h: Node, c: Node, w_ih: Node, w_hh: Node, b: Node) -> tuple[Node, Node]:
    """One LSTM step. Gate rows of the weights are ordered (input, forget, cell, output)."""
    n = h.value.shape[0]
    _check(h.value.shape == (n,) and c.value.shape == (n,), "h and c must be vectors of equal length")
    _check(w_ih.value.shape == (4 * n, x.value.shape[0]), f"w_ih shape {w_ih.value.shape} mismatched")
    _check(w_hh.value.shape == (4 * n, n), f"w_hh shape {w_hh.value.shape} mismatched")
    _check(b.value.shape == (4 * n,), f"bias shape {b.value.shape} mismatched")
    xv, hv, cv = x.value, h.value, c.value
    z = w_ih.value @ xv + w_hh.value @ hv + b.value
    i = _sig(z[:n])
    f = _sig(z[n:2 * n])
    g = np.tanh(z[2 * n:3 * n])
    o = _sig(z[3 * n:])
    c_new = f * cv + i * g
    t = np.tanh(c_new)
    h_new = o * t

    def back(grad, needs):
        gh, gc = grad[:n], grad[n:]
        dc = gc + gh * o * (1.0 - t * t)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * cv * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            gh * t * o * (1.0 - o),
        ])
        return (
            w_ih.value.T @ dz if needs[0] else None,
            w_hh.value.T @ dz if needs[1] else None,
            dc * f if needs[2] else None,
            _Outer(dz, xv) if needs[3] else None,
            _Outer(dz, hv) if needs[4] else None,
            dz if needs[5] else None,
        )

    tape = x.tape
    joint = tape.record(np.concatenate([h_new, c_new]), (x, h, c, w_ih, w_hh, b), back)
    return take(joint, slice(0, n)), take(joint, slice(n, 2 * n))


def softmax(x: Node) -> Node:
    v = x.value
    e = np.exp(v - v.max())
    y = e / e.sum()

    def back(g, needs):
        return (y * (g - np.dot(g, y)),)

    return x.tape.record(y, (x,), back)


def relu(x: Node) -> Node:
    mask = x.value > 0
    return x.tape.record(np.where(mask, x.value, 0.0), (x,), lambda g, needs: (g * mask,))


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return x.tape.record(y, (x,), lambda g, needs: (g * (1.0 - y * y),))


def sigmoid(x: Node) -> Node:
    y = _sig(x.value)
    return x.tape.record(y, (x,), lambda g, needs: (g * y * (1.0 - y),))


def add(a: Node, b: Node) -> Node:
    _check(a.value.shape == b.value.shape, f"add shapes {a.value.shape} != {b.value.shape}")
    return a.tape.record(a.value + b.value, (a, b), lambda g, needs: (g, g))


def mul(a: Node, b: Node) -> Node:
    _check(a.value.shape == b.value.shape, f"mul shapes {a.value.shape} != {b.value.shape}")
    av, bv = a.value, b.value
    return a.tape.record(av * bv, (a, b), lambda g, needs: (g * bv, g * av))


def log(x: Node) -> Node:
    v = x.value
    return x.tape.record(np.log(v), (x,), lambda g, needs: (g / v,))


def sum_(x: Node) -> Node:
    shape = x.value.shape
    return x.tape.record(np.asarray(x.value.sum()), (x,), lambda g, needs: (np.broadcast_to(g, shape).copy(),))


def scale(x: Node, k: float) -> Node:
    k = float(k)
    return x.tape.record(x.value * k, (x,), lambda g, needs: (g * k,))


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    old = x.value.shape
    return x.tape.record(x.value.reshape(shape), (x,), lambda g, needs: (g.reshape(old),))


def take(x: Node, index) -> Node:
    """``x[index]`` for an int or slice along the first axis."""
    v = x.value

    def back(g, needs):
        out = np.zeros_like(v)
        out[index] = g
        return (out,)

    return x.tape.record(np.asarray(v[index]), (x,), back)




# --------------------------------------------------------------------------
# parameters


class ParamVector:
    """Named parameter tensors backed by one contiguous float64 buffer.

    ``buffer`` may be any writable object exposing the buffer protocol (e.g. a
    ``multiprocessing.RawArray``); the tensors are then views into shared
    memory.
    """

    def __init__(self, shapes: Mapping[str, Sequence[int]], buffer=None):
        self.names: list[str] = list(shapes)
        if len(set(self.names)) != len(self.names):
            raise ContractViolation("parameter names must be unique")
        self.shapes = {name: tuple(int(d) for d in shapes[name]) for name in self.names}
        self._slices: dict[str, slice] = {}
        offset = 0
        for name in self.names:
            size = int(np.prod(self.shapes[name], dtype=np.int64))
            self._slices[name] = slice(offset, offset + size)
            offset += size
        self.size = offset
        if buffer is None:
            self.flat = np.zeros(offset, dtype=np.float64)
        else:
            self.flat = np.frombuffer(buffer, dtype=np.float64)
            if self.flat.size != offset:
                raise InvalidShape(f"buffer holds {self.flat.size} values, need {offset}")
        self._views = {n: self.flat[self._slices[n]].reshape(self.shapes[n]) for n in self.names}
        self.version = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __contains__(self, name: str) -> bool:
        return name in self._views

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def items(self):
        return ((n, self._views[n]) for n in self.names)

    def slice_of(self, name: str) -> slice:
        return self._slices[name]

    def copy(self, buffer=None) -> "ParamVector":
        out = ParamVector(self.shapes, buffer)
        out.flat[:] = self.flat
        out.version = self.version
        return out

    def assign(self, flat: np.ndarray) -> None:
        if flat.shape != self.flat.shape:
            raise InvalidShape(f"cannot assign {flat.shape} into {self.flat.shape}")
        self.flat[:] = flat
        self.version += 1

    def same_layout(self, other: "ParamVector") -> bool:
        return self.names == other.names and self.shapes == other.shapes


_MAGIC = b"FVRL"
_FORMAT_VERSION = 1


def save_checkpoint(params: ParamVector, path: str | Path) -> None:
    """Write ``params`` in the little-endian FVRL binary layout."""
    parts = [_MAGIC, struct.pack("<IQ", _FORMAT_VERSION, len(params.names))]
    for name in params.names:
        raw = name.encode("utf-8")
        shape = params.shapes[name]
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}Q", *shape))
        parts.append(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> ParamVector:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise InvalidCheckpoint(f"{path}: bad magic {data[:4]!r}")
    try:
        version, count = struct.unpack_from("<IQ", data, 4)
        if version != _FORMAT_VERSION:
            raise InvalidCheckpoint(f"{path}: unsupported format version {version}")
        pos = 16
        shapes: dict[str, tuple[int, ...]] = {}
        chunks: list[np.ndarray] = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(data, dtype="<f8", count=size, offset=pos)
            pos += 8 * size
            shapes[name] = shape
            chunks.append(values)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise InvalidCheckpoint(f"{path}: truncated or corrupt ({exc})") from exc
    if pos != len(data):
        raise InvalidCheckpoint(f"{path}: {len(data) - pos} trailing bytes")
    params = ParamVector(shapes)
    if chunks:
        params.flat[:] = np.concatenate(chunks)
    return params


# --------------------------------------------------------------------------
# gradient verification


def finite_diff_check(
    f: Callable[[ParamVector], Node],
    theta: ParamVector,
    eps: float = 1e-5,
    indices: Sequence[int] | None = None,
) -> float:
    """Max relative error between taped gradients and central differences.

    ``f`` must build its loss on a fresh tape that watches ``theta`` and
    return the scalar loss node. The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``. Coordinates may be
    restricted with ``indices`` for large parameter vectors.

    Functions with kinks (relu) are only checked reliably when no kinked
    pre-activation lies within ``eps`` of zero; callers nudge inputs away.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = f(theta)
    analytic = backward(loss.tape, loss, theta)
    idx = range(theta.size) if indices is None else indices
    worst = 0.0
    for i in idx:
        orig = theta.flat[i]
        theta.flat[i] = orig + eps
        up = float(f(theta).value)
        theta.flat[i] = orig - eps
        down = float(f(theta).value)
        theta.flat[i] = orig
        numeric = (up - down) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst
