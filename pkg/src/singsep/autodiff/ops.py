"""Differentiable operations used by the separation networks and losses."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import ContractError, Tensor, as_tensor, make_node


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(x, y):
    # constants adopt the dtype of the tensor operand
    if isinstance(x, Tensor) and not isinstance(y, Tensor):
        return x, Tensor(y, dtype=x.dtype)
    if isinstance(y, Tensor) and not isinstance(x, Tensor):
        return Tensor(x, dtype=y.dtype), y
    return as_tensor(x), as_tensor(y)


# -- elementwise ------------------------------------------------------------

def add(x, y):
    x, y = _pair(x, y)

    def backward(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return make_node(x.data + y.data, (x, y), backward)


def sub(x, y):
    x, y = _pair(x, y)

    def backward(g):
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return make_node(x.data - y.data, (x, y), backward)


def mul(x, y):
    if not isinstance(y, Tensor) and np.ndim(y) == 0:
        x = as_tensor(x)
        k = float(y)
        return make_node(x.data * k, (x,), lambda g: (g * k,))
    x, y = _pair(x, y)

    def backward(g):
        return _unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)

    return make_node(x.data * y.data, (x, y), backward)


def power(x, exponent, floor=1e-12):
    """``max(x, floor) ** exponent`` for non-negative inputs."""
    x = as_tensor(x)
    base = np.maximum(x.data, floor)
    out = base ** exponent

    def backward(g):
        return (g * exponent * base ** (exponent - 1.0) * (x.data >= floor),)

    return make_node(out, (x,), backward)


def relu(x):
    x = as_tensor(x)
    on = x.data > 0
    return make_node(np.where(on, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * on,))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_node(x.data * factor, (x,), lambda g: (g * factor,))


def sigmoid(x):
    """Logistic function, clipped so outputs stay strictly inside (0, 1)."""
    x = as_tensor(x)
    info = np.finfo(x.dtype)
    s = np.clip(expit(x.data), info.tiny, 1.0 - info.epsneg)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def activation(x, kind, slope=0.2):
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# -- reductions and losses ----------------------------------------------------

def sum(x):  # noqa: A001
    x = as_tensor(x)
    return make_node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x):
    x = as_tensor(x)
    n = x.size

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return make_node(np.asarray(x.data.mean()), (x,), backward)


def l1_mean(x):
    """Mean absolute value over all entries."""
    x = as_tensor(x)
    n = x.size
    sign = np.sign(x.data)
    return make_node(np.asarray(np.abs(x.data).mean()), (x,), lambda g: (sign * (g / n),))


def square_mean(x, target=0.0):
    """Mean of ``(x - target)**2`` over all entries; ``target`` is a constant."""
    x = as_tensor(x)
    diff = x.data - target
    n = x.size
    return make_node(np.asarray((diff * diff).mean()), (x,), lambda g: (diff * (2.0 * g / n),))


# -- shape ops ------------------------------------------------------------

def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def take(x, start, stop):
    """Rows ``start:stop`` along the leading (batch) axis."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return make_node(x.data[start:stop], (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def detach(x):
    return Tensor(as_tensor(x).data)


# -- spatial ops ------------------------------------------------------------

def _check4d(x, what):
    if x.data.ndim != 4:
        raise ContractError(f"{what} expects a 4-d tensor, got shape {x.shape}")


def _conv_input_grad_scatter(g2, wmat, padded_shape, dims, stride):
    n, ho, wo, cin, kh, kw = dims
    dcols = np.ascontiguousarray((g2 @ wmat).reshape(dims).transpose(4, 5, 0, 3, 1, 2))
    gxp = np.zeros(padded_shape, dtype=g2.dtype)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + hs:stride, j:j + ws:stride] += dcols[i, j]
    return gxp


def _conv_input_grad_transposed(g, weight, x_shape, stride, padding):
    # correlate the zero-dilated output gradient with the flipped kernel
    n, cout, ho, wo = g.shape
    _, cin, kh, kw = weight.shape
    h, w = x_shape[2], x_shape[3]
    rh = h + 2 * padding - (stride * (ho - 1) + kh)
    rw = w + 2 * padding - (stride * (wo - 1) + kw)
    ph, pw = kh - 1 - padding, kw - 1 - padding
    full = np.zeros((n, cout, stride * (ho - 1) + 1 + 2 * (kh - 1) + rh,
                     stride * (wo - 1) + 1 + 2 * (kw - 1) + rw), dtype=g.dtype)
    full[:, :, kh - 1:kh - 1 + stride * (ho - 1) + 1:stride, kw - 1:kw - 1 + stride * (wo - 1) + 1:stride] = g
    full = full[:, :, kh - 1 - ph:, kw - 1 - pw:]
    full = full[:, :, :h + kh - 1, :w + kw - 1]
    win = sliding_window_view(full, (kh, kw), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, cout * kh * kw)
    wflip = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
    return np.ascontiguousarray((cols @ wflip.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-d cross-correlation with zero padding.

    x is (N, Cin, H, W), weight (Cout, Cin, kh, kw), bias (Cout,) or None.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check4d(x, "conv2d input")
    if weight.data.ndim != 4:
        raise ContractError(f"conv2d kernel must be 4-d, got shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ContractError(f"invalid stride={stride} or padding={padding}")
    n, cin, h, w = x.shape
    cout, kcin, kh, kw = weight.shape
    if kcin != cin:
        raise ContractError(f"channel mismatch on axis 1: input has {cin}, kernel expects {kcin}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ContractError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp} on axes 2/3")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ContractError(f"bias shape {bias.shape} does not match {cout} output channels")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # im2col: rows are output positions, columns are (Cin, kh, kw) taps
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            if cout * (h + 2 * kh) * (w + 2 * kw) < cin * ho * wo * stride * stride:
                gx = _conv_input_grad_transposed(g, weight.data, x.shape, stride, padding)
            else:
                gx = _conv_input_grad_scatter(g2, wmat, xp.shape, (n, ho, wo, cin, kh, kw), stride)
                gx = gx[:, :, padding:padding + h, padding:padding + w] if padding else gx
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def instance_norm(x, gain=None, shift=None, eps=1e-5):
    """Normalize each (sample, channel) plane, then apply per-channel gain/shift."""
    x = as_tensor(x)
    _check4d(x, "instance_norm")
    m = x.shape[2] * x.shape[3]
    if m < 2:
        raise ContractError(f"instance_norm needs at least 2 values per plane, got {x.shape[2]}x{x.shape[3]}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=(2, 3), keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    if gain is not None:
        gain = as_tensor(gain)
        out = out * gain.data[None, :, None, None]
    if shift is not None:
        shift = as_tensor(shift)
        out = out + shift.data[None, :, None, None]

    def backward(g):
        gx_hat = g * gain.data[None, :, None, None] if gain is not None else g
        gx = None
        if x.requires_grad:
            s1 = gx_hat.sum(axis=(2, 3), keepdims=True)
            s2 = (gx_hat * xhat).sum(axis=(2, 3), keepdims=True)
            gx = (inv / m) * (m * gx_hat - s1 - xhat * s2)
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=(0, 2, 3)) if gain.requires_grad else None)
        if shift is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if shift.requires_grad else None)
        return tuple(grads)

    parents = tuple(t for t in (x, gain, shift) if t is not None)
    return make_node(out, parents, backward)


def nearest_upsample2x(x):
    x = as_tensor(x)
    _check4d(x, "nearest_upsample2x")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_node(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def avg_pool2x(x):
    """2x2 non-overlapping mean pooling; an odd trailing row/column is dropped."""
    x = as_tensor(x)
    _check4d(x, "avg_pool2x")
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ContractError(f"avg_pool2x needs at least 2x2 input, got {h}x{w}")
    out = x.data[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :2 * h2, :2 * w2] = np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3)
        return (gx,)

    return make_node(out, (x,), backward)
