"""Layer primitives recorded on the tape.

The LSTM, both convolutions and batch normalization are fused primitives with
hand-written backward rules; everything else is composed from tape operations.
Parameter containers (:class:`Dense`, :class:`LSTM`, ...) own named
:class:`~gazesynth.neural.tape.Tensor` leaves and expose them via ``params``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tape import ContractError, Tensor, _sigmoid, as_tensor, leaky_relu, make_node, relu, sigmoid, tanh


class DegenerateBatchError(ValueError):
    pass


# dense -----------------------------------------------------------------------

def dense_forward(x, weight, bias):
    """``x @ weight.T + bias`` for ``x`` of shape (..., in)."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[1]:
        raise ContractError(f"dense: input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    return x @ weight.T + bias


# LSTM ------------------------------------------------------------------------

def lstm_forward(x, w_ih, w_hh, bias, h0=None, c0=None):
    """Run an LSTM over ``x`` (batch, T, in) and return the hidden sequence (batch, T, hidden).

    Gate rows of the weight matrices are ordered input, forget, cell, output.
    The whole recurrence is one tape node whose backward rule is
    back-propagation through time.
    """
    x, w_ih, w_hh, bias = (as_tensor(t) for t in (x, w_ih, w_hh, bias))
    if x.ndim != 3:
        raise ContractError(f"lstm expects (batch, T, in), got {x.shape}")
    batch, steps, n_in = x.shape
    hidden = w_hh.shape[1]
    if steps == 0:
        raise ContractError("lstm: empty sequence (T = 0)")
    if w_ih.shape != (4 * hidden, n_in) or w_hh.shape != (4 * hidden, hidden) or bias.shape != (4 * hidden,):
        raise ContractError("lstm: weight shapes inconsistent with input/hidden sizes")
    h0 = as_tensor(np.zeros((batch, hidden)) if h0 is None else h0)
    c0 = as_tensor(np.zeros((batch, hidden)) if c0 is None else c0)
    if h0.shape != (batch, hidden) or c0.shape != (batch, hidden):
        raise ContractError(f"lstm: state shape must be {(batch, hidden)}, got {h0.shape}, {c0.shape}")

    H = hidden
    pre_x = x.data @ w_ih.data.T + bias.data
    gates = np.empty((steps, batch, 4 * H))
    cells = np.empty((steps + 1, batch, H))
    hs = np.empty((steps + 1, batch, H))
    cells[0] = c0.data
    hs[0] = h0.data
    whh_t = w_hh.data.T
    for t in range(steps):
        z = pre_x[:, t] + hs[t] @ whh_t
        g = gates[t]
        g[:, :2 * H] = _sigmoid(z[:, :2 * H])
        g[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        g[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
        cells[t + 1] = g[:, H:2 * H] * cells[t] + g[:, :H] * g[:, 2 * H:3 * H]
        hs[t + 1] = g[:, 3 * H:] * np.tanh(cells[t + 1])
    out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))

    def rule(grad_out):
        d_pre = np.empty((steps, batch, 4 * H))
        dh_next = np.zeros((batch, H))
        dc_next = np.zeros((batch, H))
        whh = w_hh.data
        for t in reversed(range(steps)):
            g = gates[t]
            i, f, c_bar, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            tc = np.tanh(cells[t + 1])
            dh = grad_out[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = d_pre[t]
            dz[:, :H] = dc * c_bar * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cells[t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - c_bar * c_bar)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dh_next = dz @ whh
            dc_next = dc * f
        d_pre_b = d_pre.transpose(1, 0, 2)  # batch, T, 4H
        dx = d_pre_b @ w_ih.data if x.requires_grad else None
        dw_ih = np.tensordot(d_pre_b, x.data, axes=([0, 1], [0, 1])) if w_ih.requires_grad else None
        dw_hh = np.tensordot(d_pre, hs[:-1], axes=([0, 1], [0, 1])) if w_hh.requires_grad else None
        db = d_pre.sum(axis=(0, 1)) if bias.requires_grad else None
        return dx, dw_ih, dw_hh, db, dh_next, dc_next

    return make_node(out, (x, w_ih, w_hh, bias, h0, c0), rule, "lstm")


# convolutions ------------------------------------------------------------------

def conv_output_length(length, width, stride, padding):
    return (length + 2 * padding - width) // stride + 1


def transpose_output_length(length, width, stride, padding):
    return (length - 1) * stride - 2 * padding + width


def _check_geometry(width, stride, padding):
    if stride < 1 or padding < 0 or width < 1:
        raise ContractError(f"invalid conv geometry: width={width}, stride={stride}, padding={padding}")


def _im2col(x, width, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    cols = sliding_window_view(xp, width, axis=2)[:, :, ::stride]  # B, C, L_out, K
    return cols


def _col2im(dcols, length, stride, padding):
    """Adjoint of :func:`_im2col`: scatter-add windows back into a length-``length`` signal."""
    batch, channels, n_out, width = dcols.shape
    padded = np.zeros((batch, channels, length + 2 * padding))
    span = stride * (n_out - 1) + 1
    for k in range(width):
        padded[:, :, k:k + span:stride] += dcols[:, :, :, k]
    return padded[:, :, padding:padding + length]


def _conv_raw(x, kernel, stride, padding):
    cols = _im2col(x, kernel.shape[2], stride, padding)
    return np.tensordot(cols, kernel, axes=([1, 3], [1, 2])).transpose(0, 2, 1)


def _conv_transpose_raw(y, kernel, stride, padding, length=None):
    # kernel (C_y, C_out, K): adjoint of a conv mapping C_out -> C_y
    width = kernel.shape[2]
    if length is None:
        length = transpose_output_length(y.shape[2], width, stride, padding)
    dcols = np.tensordot(y, kernel, axes=([1], [0]))  # B, L_y, C_out, K
    return _col2im(dcols.transpose(0, 2, 1, 3), length, stride, padding)


def _conv_kernel_grad(x, g, width, stride, padding):
    """d<conv(x, W), g>/dW for x (B, C_in, L), g (B, C_out, L_out)."""
    cols = _im2col(x, width, stride, padding)
    return np.tensordot(g, cols, axes=([0, 2], [0, 2]))


def conv1d_forward(x, kernel, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (B, C_in, L) with ``kernel`` (C_out, C_in, K)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    width = kernel.shape[2]
    _check_geometry(width, stride, padding)
    if x.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise ContractError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    length = x.shape[2]
    if conv_output_length(length, width, stride, padding) < 1:
        raise ContractError(f"conv1d: output length < 1 for L={length}, width={width}, padding={padding}")
    out = _conv_raw(x.data, kernel.data, stride, padding)

    def rule(g):
        dx = _conv_transpose_raw(g, kernel.data, stride, padding, length) if x.requires_grad else None
        dk = _conv_kernel_grad(x.data, g, width, stride, padding) if kernel.requires_grad else None
        return dx, dk

    node = make_node(out, (x, kernel), rule, "conv1d")
    if bias is not None:
        node = node + as_tensor(bias).reshape(1, -1, 1)
    return node


def conv1d_transpose_forward(x, kernel, bias=None, stride=1, padding=0):
    """Fractional-strided convolution: the linear adjoint of :func:`conv1d_forward`.

    ``kernel`` has shape (C_in, C_out, K), i.e. the kernel of the forward
    convolution that maps C_out channels to C_in.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    width = kernel.shape[2]
    _check_geometry(width, stride, padding)
    if x.ndim != 3 or x.shape[1] != kernel.shape[0]:
        raise ContractError(f"conv1d_transpose: input {x.shape} incompatible with kernel {kernel.shape}")
    length = transpose_output_length(x.shape[2], width, stride, padding)
    if length < 1:
        raise ContractError(f"conv1d_transpose: output length {length} < 1")
    out = _conv_transpose_raw(x.data, kernel.data, stride, padding)

    def rule(g):
        dx = _conv_raw(g, kernel.data, stride, padding) if x.requires_grad else None
        dk = _conv_kernel_grad(g, x.data, width, stride, padding) if kernel.requires_grad else None
        return dx, dk

    node = make_node(out, (x, kernel), rule, "conv1d_transpose")
    if bias is not None:
        node = node + as_tensor(bias).reshape(1, -1, 1)
    return node


# batch norm ----------------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, training=True, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization for (B, C) or (B, C, L) inputs.

    In training mode ``running_mean``/``running_var`` (numpy arrays) are
    updated in place by an exponential moving average; the running variance
    uses the unbiased batch variance.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0,) if x.ndim == 2 else (0, 2)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    if training:
        if x.shape[0] < 2:
            raise DegenerateBatchError(f"batch norm in train mode needs batch >= 2, got {x.shape[0]}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // x.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * x_hat + beta.data.reshape(shape)

    def rule(g):
        dgamma = (g * x_hat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx_hat = g * gamma.data.reshape(shape)
        if training:
            m = x.data.size // x.shape[1]
            dx = (inv_std.reshape(shape) / m) * (
                m * dx_hat
                - dx_hat.sum(axis=axes).reshape(shape)
                - x_hat * (dx_hat * x_hat).sum(axis=axes).reshape(shape)
            )
        else:
            dx = dx_hat * inv_std.reshape(shape)
        return dx, dgamma, dbeta

    return make_node(out, (x, gamma, beta), rule, "batchnorm")


def activation(x, kind, slope=0.2):
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# parameter containers --------------------------------------------------------------

class Layer:
    """Base container: ``params`` maps parameter names to tensor leaves."""

    def __init__(self, name):
        self.name = name
        self.params = {}

    def _param(self, key, value):
        t = Tensor(value, requires_grad=True, name=f"{self.name}.{key}")
        self.params[key] = t
        return t

    def parameters(self):
        return {t.name: t for t in self.params.values()}

    def state_arrays(self):
        """Non-trainable arrays that belong to the layer (e.g. running statistics)."""
        return {}


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, name="dense", std=0.02):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = self._param("weight", rng.normal(0.0, std, (n_out, n_in)))
        self.bias = self._param("bias", np.zeros(n_out))

    def __call__(self, x):
        return dense_forward(x, self.weight, self.bias)


class LSTM(Layer):
    """LSTM layer; weights uniform(-k, k) with k = 1/sqrt(hidden), forget bias 1."""

    def __init__(self, n_in, hidden, rng=None, name="lstm"):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        k = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.w_ih = self._param("w_ih", rng.uniform(-k, k, (4 * hidden, n_in)))
        self.w_hh = self._param("w_hh", rng.uniform(-k, k, (4 * hidden, hidden)))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.bias = self._param("bias", b)

    def __call__(self, x, h0=None, c0=None):
        return lstm_forward(x, self.w_ih, self.w_hh, self.bias, h0, c0)


class Conv1d(Layer):
    def __init__(self, c_in, c_out, width, stride=1, padding=0, rng=None, name="conv", std=0.02):
        super().__init__(name)
        _check_geometry(width, stride, padding)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.kernel = self._param("kernel", rng.normal(0.0, std, (c_out, c_in, width)))
        self.bias = self._param("bias", np.zeros(c_out))

    def __call__(self, x):
        return conv1d_forward(x, self.kernel, self.bias, self.stride, self.padding)


class ConvTranspose1d(Layer):
    def __init__(self, c_in, c_out, width, stride=1, padding=0, rng=None, name="deconv", std=0.02):
        super().__init__(name)
        _check_geometry(width, stride, padding)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.kernel = self._param("kernel", rng.normal(0.0, std, (c_in, c_out, width)))
        self.bias = self._param("bias", np.zeros(c_out))

    def __call__(self, x):
        return conv1d_transpose_forward(x, self.kernel, self.bias, self.stride, self.padding)


class BatchNorm1d(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5, name="bn"):
        super().__init__(name)
        self.momentum, self.eps = momentum, eps
        self.gamma = self._param("gamma", np.ones(channels))
        self.beta = self._param("beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x, training=True):
        return batchnorm_forward(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=training, momentum=self.momentum, eps=self.eps,
        )

    def state_arrays(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}
