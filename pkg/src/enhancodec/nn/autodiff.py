"""Minimal reverse-mode differentiation over numpy arrays.

A `Tape` records every differentiable operation in execution order; calling
`Tape.backward` walks the record in exact reverse order and accumulates
gradients into the participating tensors. Ops are free functions that take
the tape explicitly; passing `tape=None` runs forward-only (inference).

Only the operations the codec networks need are provided; there is no
general broadcasting machinery.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError

# When True, every recorded op asserts its output is finite. Slow; meant for
# debugging training blowups.
DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    global DEBUG_CHECKS
    DEBUG_CHECKS = bool(enabled)


class Tensor:
    """A numpy array plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A named, trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


class _Op:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops; backward runs in reverse order."""

    def __init__(self):
        self._ops: list[_Op] = []

    def __len__(self):
        return len(self._ops)

    def record(self, name, inputs, output, backward_fn) -> None:
        if DEBUG_CHECKS and not np.all(np.isfinite(output.data)):
            raise NumericalError(f"non-finite output from op '{name}'")
        self._ops.append(_Op(name, inputs, output, backward_fn))

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(tensor) into .grad for every tensor on the tape."""
        root.grad = np.ones_like(root.data)
        for op in reversed(self._ops):
            g = op.output.grad
            if g is None:
                continue
            grads = op.backward_fn(g)
            for inp, gi in zip(op.inputs, grads):
                if gi is not None:
                    inp.accumulate(gi)

    def first_nonfinite(self) -> str | None:
        """Name of the first recorded op whose output holds a NaN/Inf, if any."""
        for op in self._ops:
            if not np.all(np.isfinite(op.output.data)):
                return op.name
        return None


def _record(tape, name, inputs, out_data, backward_fn) -> Tensor:
    out = Tensor(out_data)
    if tape is not None:
        tape.record(name, inputs, out, backward_fn)
    return out


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity; contributes zero gradient to x."""
    return Tensor(x.data)


def add(a: Tensor, b: Tensor, tape=None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _record(tape, "add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor, tape=None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _record(tape, "sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor, tape=None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _record(tape, "mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def square(x: Tensor, tape=None) -> Tensor:
    xd = x.data
    return _record(tape, "square", (x,), xd * xd, lambda g: (2.0 * g * xd,))


def scale(x: Tensor, c: float, tape=None) -> Tensor:
    return _record(tape, "scale", (x,), x.data * c, lambda g: (g * c,))


def mean_all(x: Tensor, tape=None) -> Tensor:
    n = x.data.size
    return _record(
        tape, "mean_all", (x,), np.asarray(x.data.mean()),
        lambda g: (np.full_like(x.data, g / n),),
    )


def relu(x: Tensor, tape=None) -> Tensor:
    # maximum (not where) so NaN propagates instead of silently becoming 0
    mask = x.data > 0
    return _record(tape, "relu", (x,), np.maximum(x.data, 0.0), lambda g: (g * mask,))


def dense(x: Tensor, w: Tensor, b: Tensor | None = None, tape=None) -> Tensor:
    """Affine map over the last axis: (..., Din) @ (Din, Dout) + bias."""
    xd = x.data
    if xd.shape[-1] != w.data.shape[0]:
        raise ValueError(f"dense: input dim {xd.shape[-1]} != weight dim {w.data.shape[0]}")
    flat = xd.reshape(-1, xd.shape[-1])
    out = flat @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(xd.shape[:-1] + (w.data.shape[1],))

    def backward(g):
        gf = g.reshape(-1, g.shape[-1])
        dx = (gf @ w.data.T).reshape(xd.shape)
        dw = flat.T @ gf
        db = gf.sum(axis=0) if b is not None else None
        return (dx, dw, db) if b is not None else (dx, dw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _record(tape, "dense", inputs, out, backward)


def concat_last(tensors, tape=None) -> Tensor:
    """Concatenate along the last axis."""
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=-1)
    sizes = [d.shape[-1] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=-1))

    return _record(tape, "concat_last", tuple(tensors), out, backward)


def tile_time(x: Tensor, t: int, tape=None) -> Tensor:
    """(B, D) -> (B, T, D) by repetition; backward sums over time."""
    out = np.broadcast_to(x.data[:, None, :], (x.data.shape[0], t, x.data.shape[1]))
    return _record(tape, "tile_time", (x,), np.ascontiguousarray(out),
                   lambda g: (g.sum(axis=1),))


def mean_time(x: Tensor, tape=None) -> Tensor:
    """(B, T, C) -> (B, C), average over the time axis."""
    t = x.data.shape[1]
    return _record(
        tape, "mean_time", (x,), x.data.mean(axis=1),
        lambda g: (np.repeat(g[:, None, :], t, axis=1) / t,),
    )


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stabilized softmax (plain numpy, not taped)."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets, tape=None) -> Tensor:
    """Mean of -log p(target) over rows; logits (..., C), integer targets.

    Stabilized by max-subtraction. Returns a scalar tensor.
    """
    ld = logits.data
    c = ld.shape[-1]
    flat = ld.reshape(-1, c)
    t = np.asarray(targets).reshape(-1)
    if t.shape[0] != flat.shape[0]:
        raise ValueError(f"targets count {t.shape[0]} != logit rows {flat.shape[0]}")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise ValueError(f"target class out of range [0, {c})")
    zmax = flat.max(axis=1, keepdims=True)
    z = flat - zmax
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(flat.shape[0]), t]
    loss = np.asarray((lse - picked).mean())

    def backward(g):
        p = softmax(flat, axis=1)
        p[np.arange(flat.shape[0]), t] -= 1.0
        return ((g / flat.shape[0]) * p.reshape(ld.shape),)

    return _record(tape, "softmax_cross_entropy", (logits,), loss, backward)


def neg_sqdist(x: Tensor, codes: np.ndarray, tape=None) -> Tensor:
    """Logits -(||x - c_k||^2) against a fixed code table: (..., D) -> (..., K)."""
    xd = x.data
    flat = xd.reshape(-1, xd.shape[-1])
    cross = flat @ codes.T
    sq = (flat * flat).sum(axis=1, keepdims=True) - 2.0 * cross + (codes * codes).sum(axis=1)
    out = (-sq).reshape(xd.shape[:-1] + (codes.shape[0],))

    def backward(g):
        gf = g.reshape(-1, codes.shape[0])
        dx = -2.0 * flat * gf.sum(axis=1, keepdims=True) + 2.0 * (gf @ codes)
        return (dx.reshape(xd.shape),)

    return _record(tape, "neg_sqdist", (x,), out, backward)


def embedding(table: Tensor, ids, tape=None) -> Tensor:
    """Row lookup: ids (...) -> (..., D). Backward scatter-adds into the table."""
    idx = np.asarray(ids)
    out = table.data[idx]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (dt,)

    return _record(tape, "embedding", (table,), out, backward)
