"""Minimal 1-D convolutional stacks over the time axis, with backprop.

Arrays are (batch, channels, time). A stack is described by a flat spec so
encoder and decoder share the same forward/backward machinery and their
parameters live in a plain name->array dict (which keeps finite-difference
checks and serialization trivial).

Layer kinds:

    ("conv", name, c_in, c_out, kernel, stride, pad)
    ("relu",)                  leaky ReLU, slope 0.2
    ("tanh",)                  bounds the encoder output (keeps the code
                               space compact; unbounded latents make the
                               quantizer chase a drifting cloud)
    ("upsample", factor)       nearest-neighbor repeat along time
"""

import numpy as np

from .errors import ValidationError

_LEAK = 0.2


def conv1d_forward(x, w, b, stride, pad):
    batch, c_in, t = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise ValidationError(f"conv input channels {c_in} != weight channels {c_in_w}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    t_out = (t + 2 * pad - k) // stride + 1
    # (batch, c_in, t_out, k) gathered one kernel tap at a time
    cols = np.empty((batch, c_in, t_out, k), dtype=x.dtype)
    for j in range(k):
        cols[:, :, :, j] = xp[:, :, j : j + stride * t_out : stride]
    flat = cols.transpose(0, 2, 1, 3).reshape(batch, t_out, c_in * k)
    y = flat @ w.reshape(c_out, c_in * k).T + b
    cache = (flat, x.shape, w.shape, stride, pad)
    return y.transpose(0, 2, 1), cache


def conv1d_backward(dy, cache, w):
    flat, x_shape, w_shape, stride, pad = cache
    batch, c_in, t = x_shape
    c_out, _, k = w_shape
    dy_t = dy.transpose(0, 2, 1)  # (batch, t_out, c_out)
    t_out = dy_t.shape[1]
    db = dy_t.sum(axis=(0, 1))
    dw = np.tensordot(dy_t, flat, axes=([0, 1], [0, 1])).reshape(w_shape)
    dflat = dy_t @ w.reshape(c_out, c_in * k)
    dcols = dflat.reshape(batch, t_out, c_in, k).transpose(0, 2, 1, 3)
    dxp = np.zeros((batch, c_in, t + 2 * pad), dtype=dy.dtype)
    for j in range(k):
        dxp[:, :, j : j + stride * t_out : stride] += dcols[:, :, :, j]
    dx = dxp[:, :, pad : pad + t] if pad else dxp
    return dx, dw, db


def leaky_relu_forward(x):
    pos = x > 0
    return np.where(pos, x, _LEAK * x), pos


def leaky_relu_backward(dy, pos):
    return np.where(pos, dy, _LEAK * dy)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


def upsample_forward(x, factor):
    return np.repeat(x, factor, axis=2), (x.shape, factor)


def upsample_backward(dy, cache):
    (b, c, t), factor = cache
    return dy.reshape(b, c, t, factor).sum(axis=3)


def encoder_spec(c_in, hidden, c_out, n_down):
    """conv -> lrelu -> n_down x (stride-2 conv -> lrelu) -> conv -> tanh."""
    spec = [("conv", "in", c_in, hidden, 3, 1, 1), ("relu",)]
    for i in range(n_down):
        spec += [("conv", f"down{i}", hidden, hidden, 4, 2, 1), ("relu",)]
    spec += [("conv", "out", hidden, c_out, 3, 1, 1), ("tanh",)]
    return spec


def decoder_spec(c_in, hidden, c_out, n_up):
    """Mirror of the encoder: nearest-neighbor upsampling between convs."""
    spec = [("conv", "in", c_in, hidden, 3, 1, 1), ("relu",)]
    for i in range(n_up):
        spec += [("upsample", 2), ("conv", f"up{i}", hidden, hidden, 3, 1, 1), ("relu",)]
    spec.append(("conv", "out", hidden, c_out, 3, 1, 1))
    return spec


def init_stack(spec, prefix, rng, dtype=np.float64):
    """He-initialized weights for every conv in the spec."""
    params = {}
    for layer in spec:
        if layer[0] != "conv":
            continue
        _, name, c_in, c_out, k, _, _ = layer
        std = np.sqrt(2.0 / (c_in * k))
        params[f"{prefix}.{name}.w"] = (std * rng.standard_normal((c_out, c_in, k))).astype(dtype)
        params[f"{prefix}.{name}.b"] = np.zeros(c_out, dtype=dtype)
    return params


def stack_forward(spec, prefix, params, x):
    caches = []
    for layer in spec:
        kind = layer[0]
        if kind == "conv":
            _, name, _, _, _, stride, pad = layer
            w = params[f"{prefix}.{name}.w"]
            b = params[f"{prefix}.{name}.b"]
            x, cache = conv1d_forward(x, w, b, stride, pad)
            caches.append((w, cache))
        elif kind == "relu":
            x, cache = leaky_relu_forward(x)
            caches.append(cache)
        elif kind == "tanh":
            x, cache = tanh_forward(x)
            caches.append(cache)
        else:
            x, cache = upsample_forward(x, layer[1])
            caches.append(cache)
    return x, caches


def stack_backward(spec, prefix, caches, dy):
    grads = {}
    for layer, cache in zip(reversed(spec), reversed(caches)):
        kind = layer[0]
        if kind == "conv":
            _, name, _, _, _, _, _ = layer
            w, conv_cache = cache
            dy, dw, db = conv1d_backward(dy, conv_cache, w)
            grads[f"{prefix}.{name}.w"] = dw
            grads[f"{prefix}.{name}.b"] = db
        elif kind == "relu":
            dy = leaky_relu_backward(dy, cache)
        elif kind == "tanh":
            dy = tanh_backward(dy, cache)
        else:
            dy = upsample_backward(dy, cache)
    return dy, grads
