"""Recurrent forecasting models: LSTM, GRU and convolutional LSTM cells, their
bidirectional forms, three-layer stacking and hand-derived backpropagation
through time.

Conventions, fixed once and tested:

* gates are always sigmoid; the cell candidate/output activation is
  configurable (relu by default, tanh offered);
* GRU blend: h' = (1 - z) * h + z * h_tilde, i.e. z gates the candidate;
* conv cell: a length-W window is reshaped into n_seq temporal sub-steps of
  spatial width P (W = n_seq * P); every gate map is a width-K convolution
  with same padding, kernel left-anchored so out[p] = sum_k k[k] * x[p + k]
  with zeros beyond the right edge;
* bidirectional merge: the two stacks' final states are concatenated;
* deeper layers consume the full hidden sequence of the layer below, the top
  layer exposes only its final state to the scalar output head.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import MinMaxScaler
from .errors import (
    IndivisibleWindowError,
    InvalidConfigError,
    MissingForwardCacheError,
    ShapeMismatchError,
)
from .nncore import activation, activation_grad, init_params, mse_loss, sigmoid, zeros

VARIANTS = ("lstm", "gru", "conv_lstm")

# Canonical report/table column order for the six models.
MODEL_ORDER = ("LSTM", "GRU", "Conv-LSTM", "Bi-LSTM", "Bi-GRU", "Bi-Conv-LSTM")

_BASE_NAMES = {"lstm": "LSTM", "gru": "GRU", "conv_lstm": "Conv-LSTM"}

_MAGIC = b"HZB1"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    bidirectional: bool = False
    num_layers: int = 3
    hidden_units: int = 50
    conv_filters: int = 64
    kernel_width: int = 2
    n_seq: int = 2
    cell_activation: str = "relu"
    window_len: int = 4
    horizon: int = 1
    seed: int = 42

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfigError(f"unknown variant {self.variant!r}")
        if self.num_layers < 1:
            raise InvalidConfigError("num_layers must be >= 1")
        if self.cell_activation not in ("relu", "tanh"):
            raise InvalidConfigError(f"cell_activation must be relu or tanh, got {self.cell_activation!r}")
        if self.window_len < 1 or self.horizon < 1:
            raise InvalidConfigError("window_len and horizon must be positive")
        if self.variant == "conv_lstm":
            if self.conv_filters < 1 or self.kernel_width < 1 or self.n_seq < 1:
                raise InvalidConfigError("conv settings must be positive")
            if self.window_len % self.n_seq != 0:
                raise IndivisibleWindowError(
                    f"window_len {self.window_len} not divisible into {self.n_seq} sub-steps"
                )
        elif self.hidden_units < 1:
            raise InvalidConfigError("hidden_units must be positive")

    @property
    def patch_width(self) -> int:
        return self.window_len // self.n_seq

    @property
    def steps(self) -> int:
        """Temporal steps the stack unrolls over."""
        return self.n_seq if self.variant == "conv_lstm" else self.window_len

    @property
    def direction_width(self) -> int:
        """Feature width one stack feeds the output head."""
        if self.variant == "conv_lstm":
            return self.conv_filters * self.patch_width
        return self.hidden_units

    @property
    def head_width(self) -> int:
        return self.direction_width * (2 if self.bidirectional else 1)

    @property
    def model_id(self) -> str:
        base = _BASE_NAMES[self.variant]
        return f"Bi-{base}" if self.bidirectional else base


def parse_variant_token(token: str) -> tuple[str, bool]:
    """Map CLI tokens like 'bi_conv_lstm' / 'Bi-GRU' to (variant, bidirectional)."""
    norm = token.strip().lower().replace("-", "_")
    bidirectional = norm.startswith("bi_")
    if bidirectional:
        norm = norm[3:]
    if norm not in VARIANTS:
        raise InvalidConfigError(f"unknown model variant {token!r}")
    return norm, bidirectional


@dataclass
class CellState:
    """Hidden activation plus (for LSTM-family cells) the memory cell."""

    h: np.ndarray
    c: np.ndarray | None = None


# --- parameter layout -------------------------------------------------------


def param_spec(config: ModelConfig) -> list[tuple[str, tuple[int, ...], tuple[int, int] | None]]:
    """Ordered (name, shape, glorot fans or None for zero init) for a config."""
    spec: list[tuple[str, tuple[int, ...], tuple[int, int] | None]] = []
    directions = ("fwd", "bwd") if config.bidirectional else ("fwd",)
    for d in directions:
        for layer in range(config.num_layers):
            prefix = f"{d}.l{layer}."
            if config.variant == "conv_lstm":
                c = config.conv_filters
                c_in = 1 if layer == 0 else c
                k = config.kernel_width
                for gate in ("f", "i", "o", "g"):
                    spec.append((f"{prefix}W_{gate}", (c, c_in, k), (c_in * k, c * k)))
                    spec.append((f"{prefix}U_{gate}", (c, c, k), (c * k, c * k)))
                    spec.append((f"{prefix}b_{gate}", (c,), None))
            else:
                u = config.hidden_units
                d_in = 1 if layer == 0 else u
                gates = ("f", "i", "o", "g") if config.variant == "lstm" else ("z", "r", "h")
                for gate in gates:
                    spec.append((f"{prefix}W_{gate}", (d_in, u), (d_in, u)))
                    spec.append((f"{prefix}U_{gate}", (u, u), (u, u)))
                    spec.append((f"{prefix}b_{gate}", (u,), None))
    spec.append(("head.W", (config.head_width, 1), (config.head_width, 1)))
    spec.append(("head.b", (1,), None))
    return spec


def build_model(config: ModelConfig, scaler: MinMaxScaler | None = None) -> "TrainedModel":
    """Allocate all parameters from per-(seed, name) streams; biases start at 0."""
    params: dict[str, np.ndarray] = {}
    for name, shape, fans in param_spec(config):
        if fans is None:
            params[name] = zeros(shape)
        else:
            params[name] = init_params(shape, fans[0], fans[1], config.seed, name)
    return TrainedModel(config=config, params=params, scaler=scaler)


# --- single-cell steps -------------------------------------------------------


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def _lstm_cell(x, h_prev, c_prev, p, act):
    af = x @ p["W_f"] + h_prev @ p["U_f"] + p["b_f"]
    ai = x @ p["W_i"] + h_prev @ p["U_i"] + p["b_i"]
    ao = x @ p["W_o"] + h_prev @ p["U_o"] + p["b_o"]
    ag = x @ p["W_g"] + h_prev @ p["U_g"] + p["b_g"]
    f, i, o = sigmoid(af), sigmoid(ai), sigmoid(ao)
    g = activation(act, ag)
    c_new = f * c_prev + i * g
    tc = activation(act, c_new)
    h_new = o * tc
    return h_new, c_new, (f, i, o, g, ag, tc)


def _gru_cell(x, h_prev, p, act):
    z = sigmoid(x @ p["W_z"] + h_prev @ p["U_z"] + p["b_z"])
    r = sigmoid(x @ p["W_r"] + h_prev @ p["U_r"] + p["b_r"])
    rh = r * h_prev
    ah = x @ p["W_h"] + rh @ p["U_h"] + p["b_h"]
    htil = activation(act, ah)
    h_new = (1.0 - z) * h_prev + z * htil
    return h_new, (z, r, rh, ah, htil)


def conv1d_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Width-preserving 1-D convolution over the last axis.

    x: (B, C_in, P); kernel: (C_out, C_in, K). The kernel is left-anchored:
    out[..., p] = sum_k kernel[..., k] * x[..., p + k], zero beyond the edge.
    """
    b, c_in, width = x.shape
    c_out, c_in2, k_len = kernel.shape
    if c_in != c_in2:
        raise ShapeMismatchError(f"input channels {c_in} != kernel channels {c_in2}")
    return kernel.reshape(c_out, c_in * k_len) @ _conv_windows(x, k_len)


def _convlstm_cell(x, h_prev, c_prev, p, act):
    bias = lambda g: p[f"b_{g}"][None, :, None]
    af = conv1d_same(x, p["W_f"]) + conv1d_same(h_prev, p["U_f"]) + bias("f")
    ai = conv1d_same(x, p["W_i"]) + conv1d_same(h_prev, p["U_i"]) + bias("i")
    ao = conv1d_same(x, p["W_o"]) + conv1d_same(h_prev, p["U_o"]) + bias("o")
    ag = conv1d_same(x, p["W_g"]) + conv1d_same(h_prev, p["U_g"]) + bias("g")
    f, i, o = sigmoid(af), sigmoid(ai), sigmoid(ao)
    g = activation(act, ag)
    c_new = f * c_prev + i * g
    tc = activation(act, c_new)
    h_new = o * tc
    return h_new, c_new, (f, i, o, g, ag, tc)


def lstm_step(x_t, prev: CellState, params: dict[str, np.ndarray], cell_activation: str = "relu") -> CellState:
    """One LSTM step. params holds W_*, U_* and b_* for gates f, i, o, g."""
    x, squeeze = _as_batch(x_t)
    h, _ = _as_batch(prev.h)
    c, _ = _as_batch(prev.c)
    if x.shape[1] != params["W_f"].shape[0] or h.shape[1] != params["U_f"].shape[0]:
        raise ShapeMismatchError(
            f"x width {x.shape[1]} / h width {h.shape[1]} do not match parameters"
        )
    h_new, c_new, _ = _lstm_cell(x, h, c, params, cell_activation)
    if squeeze:
        return CellState(h=h_new[0], c=c_new[0])
    return CellState(h=h_new, c=c_new)


def gru_step(x_t, prev_h, params: dict[str, np.ndarray], cell_activation: str = "relu") -> np.ndarray:
    """One GRU step. params holds W_*, U_* and b_* for gates z, r, h."""
    x, squeeze = _as_batch(x_t)
    h, _ = _as_batch(prev_h)
    if x.shape[1] != params["W_z"].shape[0] or h.shape[1] != params["U_z"].shape[0]:
        raise ShapeMismatchError(
            f"x width {x.shape[1]} / h width {h.shape[1]} do not match parameters"
        )
    h_new, _ = _gru_cell(x, h, params, cell_activation)
    return h_new[0] if squeeze else h_new


def convlstm_step(x_t, prev: CellState, params: dict[str, np.ndarray], cell_activation: str = "relu") -> CellState:
    """One conv-LSTM step on (C_in, P) patches (batched: (B, C_in, P))."""
    x = np.asarray(x_t, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    h = np.asarray(prev.h, dtype=np.float64)
    c = np.asarray(prev.c, dtype=np.float64)
    if squeeze:
        h, c = h[None], c[None]
    h_new, c_new, _ = _convlstm_cell(x, h, c, params, cell_activation)
    if squeeze:
        return CellState(h=h_new[0], c=c_new[0])
    return CellState(h=h_new, c=c_new)


# --- stacked forward / backward ----------------------------------------------


def _layer_view(params: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {name[len(prefix):]: arr for name, arr in params.items() if name.startswith(prefix)}


def _fused_lstm_weights(p):
    w = np.concatenate([p["W_f"], p["W_i"], p["W_o"], p["W_g"]], axis=1)
    u = np.concatenate([p["U_f"], p["U_i"], p["U_o"], p["U_g"]], axis=1)
    b = np.concatenate([p["b_f"], p["b_i"], p["b_o"], p["b_g"]])
    return w, u, b


def _shifted_prev(seq: np.ndarray) -> np.ndarray:
    """Stack of previous-step states: zeros at t=0, then seq[:-1]."""
    prev = np.zeros_like(seq)
    prev[1:] = seq[:-1]
    return prev


def _lstm_layer_forward(x_seq, p, act, keep_cache: bool = True):
    steps, b = x_seq.shape[0], x_seq.shape[1]
    u = p["b_f"].shape[0]
    wcat, ucat, bcat = _fused_lstm_weights(p)
    # the input-side affine map has no recurrence: one GEMM for all steps
    ax = (x_seq.reshape(steps * b, -1) @ wcat).reshape(steps, b, 4 * u) + bcat
    h = np.zeros((b, u))
    c = np.zeros((b, u))
    h_seq = np.empty((steps, b, u))
    gates = [] if keep_cache else None
    for t in range(steps):
        a = ax[t] + h @ ucat
        fio = sigmoid(a[:, : 3 * u])
        f, i, o = fio[:, :u], fio[:, u : 2 * u], fio[:, 2 * u :]
        ag = a[:, 3 * u :]
        g = activation(act, ag)
        c_new = f * c + i * g
        tc = activation(act, c_new)
        if keep_cache:
            gates.append((f, i, o, g, ag, c, c_new, tc))
        c = c_new
        h = o * tc
        h_seq[t] = h
    cache = None
    if keep_cache:
        cache = {"x": x_seq, "h_seq": h_seq, "steps": gates, "fused": (wcat, ucat)}
    return h_seq, cache


def _lstm_layer_backward(d_hseq, cache, p, act, grads, prefix, need_dx: bool = True):
    steps, b, u = d_hseq.shape
    wcat, ucat = cache["fused"]
    h_prev = _shifted_prev(cache["h_seq"])
    da_seq = np.empty((steps, b, 4 * u))
    dh_carry = np.zeros((b, u))
    dc_carry = np.zeros((b, u))
    for t in reversed(range(steps)):
        f, i, o, g, ag, c_prev, c_new, tc = cache["steps"][t]
        dh = d_hseq[t] + dh_carry
        do = dh * tc
        dc = dc_carry + dh * o * activation_grad(act, c_new)
        da = da_seq[t]
        da[:, :u] = dc * c_prev * f * (1.0 - f)
        da[:, u : 2 * u] = dc * g * i * (1.0 - i)
        da[:, 2 * u : 3 * u] = do * o * (1.0 - o)
        da[:, 3 * u :] = dc * i * activation_grad(act, ag)
        dc_carry = dc * f
        dh_carry = da @ ucat.T
    da2 = da_seq.reshape(steps * b, 4 * u)
    dwcat = cache["x"].reshape(steps * b, -1).T @ da2
    ducat = h_prev.reshape(steps * b, u).T @ da2
    dbcat = da2.sum(axis=0)
    for n, gate in enumerate(("f", "i", "o", "g")):
        cols = slice(n * u, (n + 1) * u)
        grads[f"{prefix}W_{gate}"] += dwcat[:, cols]
        grads[f"{prefix}U_{gate}"] += ducat[:, cols]
        grads[f"{prefix}b_{gate}"] += dbcat[cols]
    if not need_dx:
        return None
    return (da2 @ wcat.T).reshape(cache["x"].shape)


def _gru_layer_forward(x_seq, p, act, keep_cache: bool = True):
    steps, b = x_seq.shape[0], x_seq.shape[1]
    u = p["b_z"].shape[0]
    wcat = np.concatenate([p["W_z"], p["W_r"], p["W_h"]], axis=1)
    uzr = np.concatenate([p["U_z"], p["U_r"]], axis=1)
    bcat = np.concatenate([p["b_z"], p["b_r"], p["b_h"]])
    ax = (x_seq.reshape(steps * b, -1) @ wcat).reshape(steps, b, 3 * u) + bcat
    h = np.zeros((b, u))
    h_seq = np.empty((steps, b, u))
    gates = [] if keep_cache else None
    for t in range(steps):
        zr = sigmoid(ax[t][:, : 2 * u] + h @ uzr)
        z, r = zr[:, :u], zr[:, u:]
        rh = r * h
        ah = ax[t][:, 2 * u :] + rh @ p["U_h"]
        htil = activation(act, ah)
        if keep_cache:
            gates.append((z, r, rh, ah, htil))
        h = (1.0 - z) * h + z * htil
        h_seq[t] = h
    cache = None
    if keep_cache:
        cache = {"x": x_seq, "h_seq": h_seq, "steps": gates, "fused": (wcat, uzr)}
    return h_seq, cache


def _gru_layer_backward(d_hseq, cache, p, act, grads, prefix, need_dx: bool = True):
    steps, b, u = d_hseq.shape
    wcat, uzr = cache["fused"]
    h_prev = _shifted_prev(cache["h_seq"])
    da_seq = np.empty((steps, b, 3 * u))
    rh_seq = np.empty((steps, b, u))
    dh_carry = np.zeros((b, u))
    for t in reversed(range(steps)):
        z, r, rh, ah, htil = cache["steps"][t]
        rh_seq[t] = rh
        dh = d_hseq[t] + dh_carry
        dah = dh * z * activation_grad(act, ah)
        drh = dah @ p["U_h"].T
        dz = dh * (htil - h_prev[t])
        dr = drh * h_prev[t]
        da = da_seq[t]
        da[:, :u] = dz * z * (1.0 - z)
        da[:, u : 2 * u] = dr * r * (1.0 - r)
        da[:, 2 * u :] = dah
        dh_carry = dh * (1.0 - z) + drh * r + da[:, : 2 * u] @ uzr.T
    da2 = da_seq.reshape(steps * b, 3 * u)
    hp2 = h_prev.reshape(steps * b, u)
    dwcat = cache["x"].reshape(steps * b, -1).T @ da2
    dbcat = da2.sum(axis=0)
    duzr = hp2.T @ da2[:, : 2 * u]
    for n, gate in enumerate(("z", "r", "h")):
        cols = slice(n * u, (n + 1) * u)
        grads[f"{prefix}W_{gate}"] += dwcat[:, cols]
        grads[f"{prefix}b_{gate}"] += dbcat[cols]
    grads[f"{prefix}U_z"] += duzr[:, :u]
    grads[f"{prefix}U_r"] += duzr[:, u:]
    grads[f"{prefix}U_h"] += rh_seq.reshape(steps * b, u).T @ da2[:, 2 * u :]
    if not need_dx:
        return None
    return (da2 @ wcat.T).reshape(cache["x"].shape)


def _conv_windows(x: np.ndarray, k_len: int) -> np.ndarray:
    """im2col for width-preserving conv: win[..., c*K + k, p] = xpad[..., c, p + k].

    The kernel is left-anchored, so padding zeros sit past the right edge.
    Works for any number of leading batch axes.
    """
    if k_len == 1:
        return x
    width = x.shape[-1]
    c = x.shape[-2]
    lead = x.shape[:-2]
    pad = np.zeros(lead + (c, k_len - 1))
    xpad = np.concatenate([x, pad], axis=-1)
    win = np.empty(lead + (c * k_len, width))
    for k in range(k_len):
        win[..., k::k_len, :] = xpad[..., k : k + width]
    return win


def _scatter_conv_windows(dwin: np.ndarray, k_len: int, width: int) -> np.ndarray:
    """Adjoint of _conv_windows: route window gradients back to input positions."""
    if k_len == 1:
        return dwin
    c = dwin.shape[-2] // k_len
    lead = dwin.shape[:-2]
    dxpad = np.zeros(lead + (c, width + k_len - 1))
    for k in range(k_len):
        dxpad[..., k : k + width] += dwin[..., k::k_len, :]
    return dxpad[..., :width]


def _fused_conv_weights(p):
    c = p["b_f"].shape[0]
    w = np.concatenate([p["W_f"].reshape(c, -1), p["W_i"].reshape(c, -1),
                        p["W_o"].reshape(c, -1), p["W_g"].reshape(c, -1)], axis=0)
    u = np.concatenate([p["U_f"].reshape(c, -1), p["U_i"].reshape(c, -1),
                        p["U_o"].reshape(c, -1), p["U_g"].reshape(c, -1)], axis=0)
    b = np.concatenate([p["b_f"], p["b_i"], p["b_o"], p["b_g"]])
    return w, u, b


def _conv_layer_forward(x_seq, p, act, k_len: int, keep_cache: bool = True):
    steps, b = x_seq.shape[0], x_seq.shape[1]
    c_out = p["b_f"].shape[0]
    width = x_seq.shape[3]
    wcat, ucat, bcat = _fused_conv_weights(p)
    win_x = _conv_windows(x_seq.reshape((steps * b,) + x_seq.shape[2:]), k_len)
    ax = (wcat @ win_x + bcat[:, None]).reshape(steps, b, 4 * c_out, width)
    h = np.zeros((b, c_out, width))
    c = np.zeros((b, c_out, width))
    h_seq = np.empty((steps, b, c_out, width))
    gates = [] if keep_cache else None
    win_h_seq = [] if keep_cache else None
    for t in range(steps):
        win_h = _conv_windows(h, k_len)
        a = ax[t] + ucat @ win_h
        fio = sigmoid(a[:, : 3 * c_out])
        f, i, o = fio[:, :c_out], fio[:, c_out : 2 * c_out], fio[:, 2 * c_out :]
        ag = a[:, 3 * c_out :]
        g = activation(act, ag)
        c_new = f * c + i * g
        tc = activation(act, c_new)
        if keep_cache:
            gates.append((f, i, o, g, ag, c, c_new, tc))
            win_h_seq.append(win_h)
        c = c_new
        h = o * tc
        h_seq[t] = h
    cache = None
    if keep_cache:
        cache = {"x": x_seq, "h_seq": h_seq, "steps": gates, "fused": (wcat, ucat),
                 "win_x": win_x, "win_h": win_h_seq}
    return h_seq, cache


def _conv_layer_backward(d_hseq, cache, p, act, grads, prefix, k_len: int,
                         need_dx: bool = True):
    steps, b, c_out, width = d_hseq.shape
    wcat, ucat = cache["fused"]
    da_seq = np.empty((steps, b, 4 * c_out, width))
    dh_carry = np.zeros((b, c_out, width))
    dc_carry = np.zeros((b, c_out, width))
    for t in reversed(range(steps)):
        f, i, o, g, ag, c_prev, c_new, tc = cache["steps"][t]
        dh = d_hseq[t] + dh_carry
        do = dh * tc
        dc = dc_carry + dh * o * activation_grad(act, c_new)
        da = da_seq[t]
        da[:, :c_out] = dc * c_prev * f * (1.0 - f)
        da[:, c_out : 2 * c_out] = dc * g * i * (1.0 - i)
        da[:, 2 * c_out : 3 * c_out] = do * o * (1.0 - o)
        da[:, 3 * c_out :] = dc * i * activation_grad(act, ag)
        dc_carry = dc * f
        dh_carry = _scatter_conv_windows(ucat.T @ da, k_len, width)
    # weight gradients in single folded GEMMs over (steps, batch, width)
    da_fold = da_seq.transpose(2, 0, 1, 3).reshape(4 * c_out, steps * b * width)
    win_x = cache["win_x"]
    winx_fold = win_x.transpose(1, 0, 2).reshape(win_x.shape[1], steps * b * width)
    win_h = np.stack(cache["win_h"])
    winh_fold = win_h.transpose(2, 0, 1, 3).reshape(win_h.shape[2], steps * b * width)
    dwcat = da_fold @ winx_fold.T
    ducat = da_fold @ winh_fold.T
    dbcat = da_fold.sum(axis=1)
    c_in = cache["x"].shape[2]
    for n, gate in enumerate(("f", "i", "o", "g")):
        rows = slice(n * c_out, (n + 1) * c_out)
        grads[f"{prefix}W_{gate}"] += dwcat[rows].reshape(c_out, c_in, k_len)
        grads[f"{prefix}U_{gate}"] += ducat[rows].reshape(c_out, c_out, k_len)
        grads[f"{prefix}b_{gate}"] += dbcat[rows]
    if not need_dx:
        return None
    da_flat = da_seq.reshape((steps * b,) + da_seq.shape[2:])
    dx = _scatter_conv_windows(wcat.T @ da_flat, k_len, width)
    return dx.reshape(cache["x"].shape)


@dataclass
class ForwardCache:
    windows: np.ndarray
    feats: np.ndarray  # (B, head_width)
    preds: np.ndarray  # (B,)
    directions: dict[str, list]  # direction -> per-layer cache dicts


class TrainedModel:
    """A (possibly untrained) model: config, named parameters, input scaler."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray],
                 scaler: MinMaxScaler | None = None):
        self.config = config
        self.params = params
        self.scaler = scaler
        # Param arrays are mutated in place (never rebound), so per-layer views
        # stay valid for the model's lifetime.
        self._views: dict[str, dict[str, np.ndarray]] = {}

    def _layer_params(self, prefix: str) -> dict[str, np.ndarray]:
        view = self._views.get(prefix)
        if view is None:
            view = _layer_view(self.params, prefix)
            self._views[prefix] = view
        return view

    # -- forward ------------------------------------------------------------

    def _window_to_seq(self, windows: np.ndarray) -> np.ndarray:
        cfg = self.config
        b = windows.shape[0]
        if cfg.variant == "conv_lstm":
            # (B, W) -> n_seq sub-steps of single-channel width-P patches
            patches = windows.reshape(b, cfg.n_seq, 1, cfg.patch_width)
            return np.ascontiguousarray(patches.transpose(1, 0, 2, 3))
        return np.ascontiguousarray(windows.T[:, :, None])

    def _stack_forward(self, prefix, x_seq, keep_cache: bool = True):
        cfg = self.config
        layer_caches = []
        seq = x_seq
        for layer in range(cfg.num_layers):
            p = self._layer_params(f"{prefix}.l{layer}.")
            if cfg.variant == "gru":
                seq, cache = _gru_layer_forward(seq, p, cfg.cell_activation, keep_cache)
            elif cfg.variant == "conv_lstm":
                seq, cache = _conv_layer_forward(seq, p, cfg.cell_activation,
                                                 cfg.kernel_width, keep_cache)
            else:
                seq, cache = _lstm_layer_forward(seq, p, cfg.cell_activation, keep_cache)
            layer_caches.append(cache)
        feat = seq[-1].reshape(seq.shape[1], -1)
        return feat, layer_caches

    def forward_batch(self, windows, keep_cache: bool = True):
        """Predictions (scaled space) for a (n, W) batch, with cached internals."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 1:
            windows = windows[None, :]
        cfg = self.config
        if windows.ndim != 2 or windows.shape[1] != cfg.window_len:
            raise ShapeMismatchError(
                f"windows shape {windows.shape} incompatible with W={cfg.window_len}"
            )
        directions: dict[str, list] = {}
        feats = []
        feat, caches = self._stack_forward("fwd", self._window_to_seq(windows), keep_cache)
        directions["fwd"] = caches
        feats.append(feat)
        if cfg.bidirectional:
            reversed_windows = np.ascontiguousarray(windows[:, ::-1])
            feat_b, caches_b = self._stack_forward(
                "bwd", self._window_to_seq(reversed_windows), keep_cache
            )
            directions["bwd"] = caches_b
            feats.append(feat_b)
        feat_all = np.concatenate(feats, axis=1) if len(feats) > 1 else feats[0]
        preds = feat_all @ self.params["head.W"][:, 0] + self.params["head.b"][0]
        if not keep_cache:
            return preds, None
        return preds, ForwardCache(windows=windows, feats=feat_all, preds=preds,
                                   directions=directions)

    def predict(self, windows) -> np.ndarray:
        return self.forward_batch(windows, keep_cache=False)[0]

    # -- backward -------------------------------------------------------------

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.params.items()}

    def _stack_backward(self, d_last, caches, prefix, grads):
        cfg = self.config
        steps = cfg.steps
        top = cfg.num_layers - 1
        if cfg.variant == "conv_lstm":
            d_last = d_last.reshape(
                d_last.shape[0], cfg.conv_filters, cfg.patch_width
            )
        d_hseq = np.zeros((steps,) + d_last.shape)
        d_hseq[steps - 1] = d_last
        for layer in range(top, -1, -1):
            p = self._layer_params(f"{prefix}.l{layer}.")
            layer_prefix = f"{prefix}.l{layer}."
            cache = caches[layer]
            need_dx = layer > 0  # the window itself is data, not a parameter
            if cfg.variant == "gru":
                d_hseq = _gru_layer_backward(d_hseq, cache, p, cfg.cell_activation,
                                             grads, layer_prefix, need_dx)
            elif cfg.variant == "conv_lstm":
                d_hseq = _conv_layer_backward(d_hseq, cache, p, cfg.cell_activation,
                                              grads, layer_prefix, cfg.kernel_width,
                                              need_dx)
            else:
                d_hseq = _lstm_layer_backward(d_hseq, cache, p, cfg.cell_activation,
                                              grads, layer_prefix, need_dx)

    def backward_batch(self, targets, cache: ForwardCache | None, out_grads=None):
        """Batch-mean MSE and exact gradients for every parameter.

        ``out_grads`` may supply a pre-zeroed gradient dict to accumulate into
        (the training loop reuses one flat buffer this way).
        """
        if cache is None:
            raise MissingForwardCacheError("forward_batch must run before backward_batch")
        targets = np.asarray(targets, dtype=np.float64)
        loss, dpred = mse_loss(cache.preds, targets)
        grads = out_grads if out_grads is not None else self.zero_grads()
        head_w = self.params["head.W"]
        grads["head.W"][:, 0] = cache.feats.T @ dpred
        grads["head.b"][0] = dpred.sum()
        dfeat = dpred[:, None] * head_w[:, 0][None, :]
        width = self.config.direction_width
        self._stack_backward(dfeat[:, :width], cache.directions["fwd"], "fwd", grads)
        if self.config.bidirectional:
            self._stack_backward(dfeat[:, width:], cache.directions["bwd"], "bwd", grads)
        return loss, grads

    def loss_and_grads(self, windows, targets):
        _, cache = self.forward_batch(windows)
        return self.backward_batch(targets, cache)

    # -- flat parameter access (training-loop fast path) ------------------------

    def flatten_params(self) -> np.ndarray:
        """Rebind every parameter to a view into one flat buffer.

        Returns the buffer; in-place updates on it are seen by the model.
        """
        flat = np.concatenate([value.ravel() for value in self.params.values()])
        offset = 0
        for name, value in list(self.params.items()):
            size = value.size
            self.params[name] = flat[offset : offset + size].reshape(value.shape)
            offset += size
        self._views.clear()
        return flat

    def flat_grad_views(self) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """A zeroed flat gradient buffer plus per-parameter views into it."""
        total = sum(value.size for value in self.params.values())
        flat = np.zeros(total)
        views = {}
        offset = 0
        for name, value in self.params.items():
            views[name] = flat[offset : offset + value.size].reshape(value.shape)
            offset += value.size
        return flat, views

    # -- serialization ----------------------------------------------------------

    def save(self, path) -> None:
        lines = [f"format={_FORMAT_VERSION}"]
        for key in ("variant", "bidirectional", "num_layers", "hidden_units",
                    "conv_filters", "kernel_width", "n_seq", "cell_activation",
                    "window_len", "horizon", "seed"):
            lines.append(f"{key}={getattr(self.config, key)}")
        if self.scaler is not None:
            lines.append(f"scaler_min={self.scaler.min!r}")
            lines.append(f"scaler_max={self.scaler.max!r}")
        header = ("\n".join(lines) + "\n\n").encode("utf-8")
        with open(path, "wb") as handle:
            handle.write(_MAGIC)
            handle.write(header)
            for name, value in self.params.items():
                encoded = name.encode("utf-8")
                rows, cols = _flat_2d(value.shape)
                handle.write(struct.pack("<I", len(encoded)))
                handle.write(encoded)
                handle.write(struct.pack("<II", rows, cols))
                handle.write(np.ascontiguousarray(value, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        blob = Path(path).read_bytes()
        if blob[:4] != _MAGIC:
            raise InvalidConfigError(f"{path}: not a model file (bad magic)")
        header_end = blob.index(b"\n\n", 4)
        fields = {}
        for line in blob[4:header_end].decode("utf-8").splitlines():
            key, _, value = line.partition("=")
            fields[key] = value
        if int(fields.pop("format", "0")) != _FORMAT_VERSION:
            raise InvalidConfigError(f"{path}: unsupported model format")
        scaler = None
        if "scaler_min" in fields:
            scaler = MinMaxScaler(min=float(fields.pop("scaler_min")),
                                  max=float(fields.pop("scaler_max")))
        config = ModelConfig(
            variant=fields["variant"],
            bidirectional=fields["bidirectional"] == "True",
            num_layers=int(fields["num_layers"]),
            hidden_units=int(fields["hidden_units"]),
            conv_filters=int(fields["conv_filters"]),
            kernel_width=int(fields["kernel_width"]),
            n_seq=int(fields["n_seq"]),
            cell_activation=fields["cell_activation"],
            window_len=int(fields["window_len"]),
            horizon=int(fields["horizon"]),
            seed=int(fields["seed"]),
        )
        params: dict[str, np.ndarray] = {}
        offset = header_end + 2
        for name, shape, _ in param_spec(config):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            stored = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            if stored != name:
                raise InvalidConfigError(f"{path}: expected parameter {name}, found {stored}")
            rows, cols = struct.unpack_from("<II", blob, offset)
            offset += 8
            if (rows, cols) != _flat_2d(shape):
                raise ShapeMismatchError(f"{path}: {name} stored as {rows}x{cols}")
            count = rows * cols
            flat = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            offset += count * 8
            params[name] = flat.reshape(shape).astype(np.float64)
        return cls(config=config, params=params, scaler=scaler)


def _flat_2d(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 0:
        return 1, 1
    if len(shape) == 1:
        return 1, shape[0]
    return shape[0], int(np.prod(shape[1:]))


# --- spec-level entry points ---------------------------------------------------


def run_sequence(model: TrainedModel, window) -> float:
    """Scalar prediction (scaled space) for one length-W window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1 or len(window) != model.config.window_len:
        raise ShapeMismatchError(
            f"window of length {window.shape} does not match W={model.config.window_len}"
        )
    return float(model.predict(window[None, :])[0])


def bidirectional_forward(model: TrainedModel, window) -> float:
    if not model.config.bidirectional:
        raise InvalidConfigError("model is not bidirectional")
    return run_sequence(model, window)


def backprop_through_time(model: TrainedModel, windows, targets):
    """Batch-mean MSE loss and exact gradients for every parameter."""
    return model.loss_and_grads(windows, targets)
