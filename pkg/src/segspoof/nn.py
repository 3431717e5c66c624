"""From-scratch neural primitives with exact gradients.

Everything runs in float64 on plain numpy arrays. The LSTM keeps a cache of
per-step activations from the forward pass; the backward pass replays it to
produce exact backpropagation-through-time gradients. A finite-difference
checker validates every analytic gradient in the test suite.

Packed gate layout: pre-activations are stored as [input, forget, output,
candidate] so the three sigmoid gates occupy one contiguous slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import flops

BCE_EPS = 1e-7


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def bce(y, p, eps: float = BCE_EPS):
    """Binary cross-entropy -(y ln p + (1-y) ln(1-p)) with clipped p."""
    p = np.clip(p, eps, 1.0 - eps)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


@dataclass
class LstmLayer:
    """One layer's weights: w_x [D x 4H], w_h [H x 4H], b [4H]."""

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]


def init_lstm_layers(
    n_layers: int, input_dim: int, hidden: int, rng: np.random.Generator
) -> list[LstmLayer]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget bias +1."""
    layers = []
    for i in range(n_layers):
        d = input_dim if i == 0 else hidden
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0
        layers.append(
            LstmLayer(
                w_x=uniform_init(rng, (d, 4 * hidden), d),
                w_h=uniform_init(rng, (hidden, 4 * hidden), hidden),
                b=b,
            )
        )
    return layers


@dataclass
class _LayerCache:
    x: np.ndarray  # [T, D] layer input
    gates: np.ndarray  # [T, 4H]: sigmoided i,f,o and tanh'd candidate
    h_full: np.ndarray  # [T+1, H], row 0 = h0
    c_full: np.ndarray  # [T+1, H], row 0 = c0
    tanh_c: np.ndarray  # [T, H]


@dataclass
class LstmCache:
    layers: list[_LayerCache] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return 0 if not self.layers else self.layers[0].gates.shape[0]


def lstm_forward(
    layers: list[LstmLayer],
    x: np.ndarray,
    h0: np.ndarray | None = None,
    c0: np.ndarray | None = None,
) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray], LstmCache]:
    """Run a layer stack over a sequence.

    x: [T x input_dim]; h0, c0: [n_layers x hidden] (zeros when omitted).
    Returns (top-layer hidden sequence [T x H], final (h, c) across layers,
    cache for lstm_backward).
    """
    n_layers = len(layers)
    hidden = layers[0].hidden
    dtype = layers[0].w_x.dtype
    x = np.ascontiguousarray(x, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != layers[0].input_dim:
        raise ValueError(
            f"input shape {x.shape} does not match layer-0 input dim {layers[0].input_dim}"
        )
    if h0 is None:
        h0 = np.zeros((n_layers, hidden), dtype=dtype)
    if c0 is None:
        c0 = np.zeros((n_layers, hidden), dtype=dtype)
    if h0.shape != (n_layers, hidden) or c0.shape != (n_layers, hidden):
        raise ValueError("state shape must be [n_layers x hidden]")

    t_steps = x.shape[0]
    cache = LstmCache()
    h_final = np.empty((n_layers, hidden), dtype=dtype)
    c_final = np.empty((n_layers, hidden), dtype=dtype)
    seq = x
    if t_steps == 0:
        return np.zeros((0, hidden), dtype=dtype), (h0.copy(), c0.copy()), cache

    z_buf = np.empty(4 * hidden, dtype=dtype)
    tmp_h = np.empty(hidden, dtype=dtype)
    h3 = 3 * hidden
    for li, layer in enumerate(layers):
        # Input projections for the whole sequence in one product.
        zx = seq @ layer.w_x
        zx += layer.b
        flops.add(t_steps * layer.input_dim * 4 * hidden)
        gates = np.empty((t_steps, 4 * hidden), dtype=dtype)
        h_full = np.empty((t_steps + 1, hidden), dtype=dtype)
        c_full = np.empty((t_steps + 1, hidden), dtype=dtype)
        tanh_c = np.empty((t_steps, hidden), dtype=dtype)
        h_full[0] = h0[li]
        c_full[0] = c0[li]
        w_h = layer.w_h
        for t in range(t_steps):
            z = gates[t]
            np.dot(h_full[t], w_h, out=z_buf)
            np.add(zx[t], z_buf, out=z)
            # Sigmoid of the three gates via 0.5*(tanh(x/2) + 1), in place.
            ifo = z[:h3]
            ifo *= 0.5
            np.tanh(ifo, out=ifo)
            ifo += 1.0
            ifo *= 0.5
            g = z[h3:]
            np.tanh(g, out=g)
            i_g, f_g, o_g = z[:hidden], z[hidden : 2 * hidden], z[2 * hidden : h3]
            c = c_full[t + 1]
            np.multiply(f_g, c_full[t], out=c)
            np.multiply(i_g, g, out=tmp_h)
            c += tmp_h
            tc = tanh_c[t]
            np.tanh(c, out=tc)
            np.multiply(o_g, tc, out=h_full[t + 1])
        flops.add(t_steps * hidden * 4 * hidden)
        cache.layers.append(_LayerCache(seq, gates, h_full, c_full, tanh_c))
        h_final[li] = h_full[-1]
        c_final[li] = c_full[-1]
        seq = h_full[1:]
    return seq, (h_final, c_final), cache


def lstm_backward(
    layers: list[LstmLayer],
    cache: LstmCache,
    dh_top: np.ndarray,
    dh_final: np.ndarray | None = None,
    dc_final: np.ndarray | None = None,
) -> tuple[list[tuple[np.ndarray, np.ndarray, np.ndarray]], np.ndarray, np.ndarray, np.ndarray]:
    """Exact BPTT for a matching lstm_forward cache.

    dh_top: [T x H] upstream gradient on the top-layer hidden sequence.
    dh_final/dc_final: optional [n_layers x H] gradients on the final state.
    Returns (per-layer (dw_x, dw_h, db), dx [T x D], dh0, dc0).
    """
    n_layers = len(layers)
    if len(cache.layers) != n_layers:
        raise ValueError("cache does not match layer stack")
    hidden = layers[0].hidden
    t_steps = cache.n_steps
    if dh_top.shape != (t_steps, hidden):
        raise ValueError(f"dh_top shape {dh_top.shape} does not match cache ({t_steps}, {hidden})")
    if dh_final is None:
        dh_final = np.zeros((n_layers, hidden))
    if dc_final is None:
        dc_final = np.zeros((n_layers, hidden))

    grads: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = [None] * n_layers  # type: ignore
    dtype = layers[0].w_x.dtype
    dh0 = np.empty((n_layers, hidden), dtype=dtype)
    dc0 = np.empty((n_layers, hidden), dtype=dtype)
    d_seq = np.asarray(dh_top, dtype=dtype)
    h3 = 3 * hidden
    dh_buf = np.empty(hidden, dtype=dtype)
    dc_buf = np.empty(hidden, dtype=dtype)
    tmp = np.empty(hidden, dtype=dtype)
    tmp2 = np.empty(hidden, dtype=dtype)

    for li in range(n_layers - 1, -1, -1):
        layer = layers[li]
        lc = cache.layers[li]
        gates, c_full, tanh_c = lc.gates, lc.c_full, lc.tanh_c
        dz_all = np.empty((t_steps, 4 * hidden), dtype=dtype)
        dc_buf[:] = dc_final[li]
        dh_carry = np.array(dh_final[li], dtype=dtype)
        w_h = layer.w_h

        # Activation derivatives for all steps at once; the sequential loop
        # below then only chains the carry terms.
        deriv = np.empty_like(gates)  # sigma'(z) for i,f,o; tanh'(z) for g
        np.subtract(1.0, gates, out=deriv)
        deriv *= gates
        g_act = gates[:, h3:]
        np.multiply(g_act, g_act, out=deriv[:, h3:])
        np.subtract(1.0, deriv[:, h3:], out=deriv[:, h3:])
        one_minus_tc2 = np.empty_like(tanh_c)
        np.multiply(tanh_c, tanh_c, out=one_minus_tc2)
        np.subtract(1.0, one_minus_tc2, out=one_minus_tc2)
        i_act = gates[:, :hidden]
        f_act = gates[:, hidden : 2 * hidden]
        o_act = gates[:, 2 * hidden : h3]
        tc_do = tanh_c * deriv[:, 2 * hidden : h3]  # dz_o = dh * tc_do
        o_dc = o_act * one_minus_tc2  # dc += dh * o_dc
        g_di = g_act * deriv[:, :hidden]  # dz_i = dc * g_di
        c_df = c_full[:-1] * deriv[:, hidden : 2 * hidden]  # dz_f = dc * c_df
        i_dg = i_act * deriv[:, h3:]  # dz_g = dc * i_dg

        for t in range(t_steps - 1, -1, -1):
            np.add(d_seq[t], dh_carry, out=dh_buf)
            dz = dz_all[t]
            np.multiply(dh_buf, tc_do[t], out=dz[2 * hidden : h3])
            np.multiply(dh_buf, o_dc[t], out=tmp)
            dc_buf += tmp
            np.multiply(dc_buf, g_di[t], out=dz[:hidden])
            np.multiply(dc_buf, c_df[t], out=dz[hidden : 2 * hidden])
            np.multiply(dc_buf, i_dg[t], out=dz[h3:])
            np.dot(w_h, dz, out=dh_carry)  # == dz @ w_h.T
            dc_buf *= f_act[t]
        dh0[li] = dh_carry
        dc0[li] = dc_buf
        dw_x = lc.x.T @ dz_all
        dw_h = lc.h_full[:-1].T @ dz_all
        db = dz_all.sum(axis=0)
        grads[li] = (dw_x, dw_h, db)
        d_seq = dz_all @ layer.w_x.T
    return grads, d_seq, dh0, dc0


# ---------------------------------------------------------------------------
# 1-D convolution (same padding) as an im2col matrix product
# ---------------------------------------------------------------------------


def conv1d_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, kernel: int
) -> tuple[np.ndarray, np.ndarray]:
    """Temporal convolution with same-length zero padding.

    x: [T x C_in]; w: [(kernel*C_in) x C_out], taps ordered tap-major.
    Returns (y [T x C_out], column matrix kept for the backward pass).
    """
    t_steps, c_in = x.shape
    pad_left = kernel // 2
    x_pad = np.zeros((t_steps + kernel - 1, c_in), dtype=w.dtype)
    x_pad[pad_left : pad_left + t_steps] = x
    cols = np.concatenate([x_pad[j : j + t_steps] for j in range(kernel)], axis=1)
    y = cols @ w + b
    flops.add(t_steps * kernel * c_in * w.shape[1])
    return y, cols


def conv1d_backward(
    dy: np.ndarray, cols: np.ndarray, w: np.ndarray, kernel: int, c_in: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv1d_forward; returns (dw, db, dx)."""
    t_steps = dy.shape[0]
    dw = cols.T @ dy
    db = dy.sum(axis=0)
    dcols = dy @ w.T
    pad_left = kernel // 2
    dx_pad = np.zeros((t_steps + kernel - 1, c_in), dtype=w.dtype)
    for j in range(kernel):
        dx_pad[j : j + t_steps] += dcols[:, j * c_in : (j + 1) * c_in]
    return dw, db, dx_pad[pad_left : pad_left + t_steps]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(
    params: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for k, p in params.items():
        state.m[k] = np.zeros_like(p)
        state.v[k] = np.zeros_like(p)
    return state


def adam_step(
    state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    scale = state.lr * np.sqrt(bias2) / bias1
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {k}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= scale * m / (np.sqrt(v) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    f,
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between central differences of f and analytic grads.

    f takes the params dict and returns a scalar; params are perturbed in
    place and restored. Non-finite values of f count as failure (inf).
    The denominator is floored at 1e-6, so coordinates where both gradients
    are tiny are compared absolutely (central differences of a float64
    scalar cannot resolve relative error below roundoff there).
    """
    worst = 0.0
    for key in sorted(params):
        w = params[key]
        ana = analytic[key]
        if ana.shape != w.shape:
            raise ValueError(f"analytic gradient shape mismatch for {key}")
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            fp = float(f(params))
            w[idx] = orig - h
            fm = float(f(params))
            w[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                return float("inf")
            num = (fp - fm) / (2.0 * h)
            denom = max(abs(num) + abs(ana[idx]), 1e-6)
            err = abs(num - ana[idx]) / denom
            if err > worst:
                worst = err
    return worst
