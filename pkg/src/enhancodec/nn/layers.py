"""Network layers: 1-D convolution, batch normalization, GRU.

All ops take (B, T, C)-shaped inputs with channels last. The GRU sequence op
records a single tape entry whose backward performs truncated-free BPTT over
the saved per-step activations; this keeps the per-timestep Python overhead
of long sample-rate sequences manageable.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor, _record


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    """Fan-in scaled uniform draw in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def same_pad(t: int, stride: int, kernel: int) -> tuple[int, int, int]:
    """(t_out, pad_left, pad_right) for 'same' conv output ceil(t/stride)."""
    t_out = -(-t // stride)
    pad_total = max((t_out - 1) * stride + kernel - t, 0)
    left = pad_total // 2
    return t_out, left, pad_total - left


def conv1d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, tape=None) -> Tensor:
    """Same-padded 1-D convolution over time.

    x: (B, T, Cin), w: (K, Cin, Cout), b: (Cout). Output (B, ceil(T/stride), Cout).
    """
    xd = x.data
    if xd.ndim != 3:
        raise ValueError(f"conv1d expects (B, T, C) input, got shape {xd.shape}")
    kernel, c_in, c_out = w.data.shape
    if xd.shape[2] != c_in:
        raise ValueError(f"conv1d channel mismatch: input {xd.shape[2]}, weight {c_in}")
    batch, t, _ = xd.shape
    t_out, pad_left, pad_right = same_pad(t, stride, kernel)

    xp = np.zeros((batch, pad_left + t + pad_right, c_in), dtype=xd.dtype)
    xp[:, pad_left : pad_left + t] = xd
    out = np.zeros((batch, t_out, c_out), dtype=xd.dtype)
    for k in range(kernel):
        seg = xp[:, k : k + stride * t_out : stride, :]
        out += seg @ w.data[k]
    if b is not None:
        out += b.data

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        g2 = g.reshape(-1, c_out)
        for k in range(kernel):
            seg = xp[:, k : k + stride * t_out : stride, :]
            dw[k] = seg.reshape(-1, c_in).T @ g2
            dxp[:, k : k + stride * t_out : stride, :] += g @ w.data[k].T
        dx = dxp[:, pad_left : pad_left + t]
        if b is not None:
            return dx, dw, g2.sum(axis=0)
        return dx, dw

    inputs = (x, w, b) if b is not None else (x, w)
    return _record(tape, "conv1d", inputs, out, backward)


class BatchNormState:
    """Running statistics for one batchnorm layer (per-channel)."""

    def __init__(self, channels: int, dtype=np.float64):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    tape=None,
) -> Tensor:
    """Per-channel batch normalization of a (B, T, C) tensor.

    Training mode normalizes by batch statistics over (B, T) and updates the
    running statistics in place; eval mode uses the running statistics.
    """
    xd = x.data
    if training:
        mean = xd.mean(axis=(0, 1))
        var = xd.var(axis=(0, 1))
        state.running_mean += momentum * (mean - state.running_mean)
        state.running_var += momentum * (var - state.running_var)
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 1))
        dbeta = g.sum(axis=(0, 1))
        if not training:
            return g * (gamma.data * inv_std), dgamma, dbeta
        m = xd.shape[0] * xd.shape[1]
        dxhat = g * gamma.data
        dx = (
            inv_std / m
            * (m * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1)))
        )
        return dx, dgamma, dbeta

    return _record(tape, "batchnorm", (x, gamma, beta), out, backward)


class GRUParams:
    """Weights for one GRU. Gate order is (update z, reset r, candidate c).

    w: (Din, 3H) input projection, u_zr: (H, 2H), u_c: (H, H) recurrent
    projections, b: (3H,). The reset gate multiplies the previous hidden
    state before the candidate transform:

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        c = tanh(x W_c + (r * h) U_c + b_c)
        h' = (1 - z) * c + z * h
    """

    def __init__(self, name: str, input_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.hidden = hidden
        self.w = Parameter(uniform_init(rng, (input_dim, 3 * hidden), input_dim, dtype), f"{name}.w")
        self.u_zr = Parameter(uniform_init(rng, (hidden, 2 * hidden), hidden, dtype), f"{name}.u_zr")
        self.u_c = Parameter(uniform_init(rng, (hidden, hidden), hidden, dtype), f"{name}.u_c")
        self.b = Parameter(np.zeros(3 * hidden, dtype=dtype), f"{name}.b")

    def parameters(self):
        return [self.w, self.u_zr, self.u_c, self.b]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_step(p: GRUParams, gates_x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One recurrence step given precomputed input gates x @ w + b.

    gates_x: (B, 3H), h: (B, H) -> next hidden (B, H). Forward only.
    """
    hh = p.hidden
    zr = _sigmoid(gates_x[:, : 2 * hh] + h @ p.u_zr.data)
    z, r = zr[:, :hh], zr[:, hh:]
    c = np.tanh(gates_x[:, 2 * hh :] + (r * h) @ p.u_c.data)
    return (1.0 - z) * c + z * h


def gru_input_gates(p: GRUParams, x: np.ndarray) -> np.ndarray:
    """Bulk input projection x @ w + b for any leading shape."""
    return x @ p.w.data + p.b.data


def gru_sequence(x: Tensor, p: GRUParams, h0: np.ndarray | None = None, tape=None) -> Tensor:
    """Run the GRU over a (B, T, Din) input; returns all hidden states (B, T, H)."""
    xd = x.data
    if xd.ndim != 3:
        raise ValueError(f"gru_sequence expects (B, T, D), got {xd.shape}")
    batch, t, _ = xd.shape
    hh = p.hidden
    dtype = xd.dtype
    h = np.zeros((batch, hh), dtype=dtype) if h0 is None else h0.astype(dtype)

    gates_x = gru_input_gates(p, xd)  # (B, T, 3H)
    zs = np.empty((t, batch, hh), dtype=dtype)
    rs = np.empty((t, batch, hh), dtype=dtype)
    cs = np.empty((t, batch, hh), dtype=dtype)
    hs = np.empty((t + 1, batch, hh), dtype=dtype)
    hs[0] = h
    u_zr, u_c = p.u_zr.data, p.u_c.data
    for i in range(t):
        gx = gates_x[:, i, :]
        zr = _sigmoid(gx[:, : 2 * hh] + h @ u_zr)
        z, r = zr[:, :hh], zr[:, hh:]
        c = np.tanh(gx[:, 2 * hh :] + (r * h) @ u_c)
        h = (1.0 - z) * c + z * h
        zs[i], rs[i], cs[i] = z, r, c
        hs[i + 1] = h
    out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))  # (B, T, H)

    def backward(g):
        dgates = np.empty((t, batch, 3 * hh), dtype=dtype)
        rh = np.empty((t, batch, hh), dtype=dtype)
        dh = np.zeros((batch, hh), dtype=dtype)
        u_zr_t, u_c_t = u_zr.T, u_c.T
        for i in range(t - 1, -1, -1):
            dh = dh + g[:, i, :]
            z, r, c, h_prev = zs[i], rs[i], cs[i], hs[i]
            dc = dh * (1.0 - z)
            dz = dh * (h_prev - c)
            dh_prev = dh * z
            dc_pre = dc * (1.0 - c * c)
            drh = dc_pre @ u_c_t
            dr = drh * h_prev
            dh_prev += drh * r
            dz_pre = dz * z * (1.0 - z)
            dr_pre = dr * r * (1.0 - r)
            dzr = np.concatenate([dz_pre, dr_pre], axis=1)
            dh_prev += dzr @ u_zr_t
            dgates[i, :, : 2 * hh] = dzr
            dgates[i, :, 2 * hh :] = dc_pre
            rh[i] = r * h_prev
            dh = dh_prev
        dgates_flat = dgates.reshape(t * batch, 3 * hh)
        hprev_flat = hs[:-1].reshape(t * batch, hh)
        du_zr = hprev_flat.T @ dgates_flat[:, : 2 * hh]
        du_c = rh.reshape(t * batch, hh).T @ dgates_flat[:, 2 * hh :]
        dgates_bt = dgates.transpose(1, 0, 2)  # (B, T, 3H)
        dx = dgates_bt @ p.w.data.T
        dw = xd.reshape(batch * t, -1).T @ dgates_bt.reshape(batch * t, 3 * hh)
        db = dgates_flat.sum(axis=0)
        return dx, dw, du_zr, du_c, db

    return _record(tape, "gru_sequence", (x, p.w, p.u_zr, p.u_c, p.b), out, backward)
