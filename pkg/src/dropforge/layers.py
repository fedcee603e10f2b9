"""Layer implementations with explicit forward and backward passes.

All layers operate on batched arrays (leading batch axis, channel-last for
images).  ``forward(x, ctx)`` fills ``ctx`` with whatever the corresponding
``backward(dy, ctx)`` needs; backward returns ``(dx, param_grads)`` where
``param_grads`` aligns with ``params()``.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


class Layer:
    kind = "layer"

    def params(self) -> list[np.ndarray]:
        return []

    def set_params(self, values) -> None:
        if values:
            raise ShapeError(f"{self.kind} takes no parameters")

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def forward(self, x: np.ndarray, ctx: dict | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, ctx: dict):
        raise NotImplementedError

    def hyperparams(self) -> dict:
        return {}

    def copy(self, dtype=None) -> "Layer":
        clone = type(self)(**self.hyperparams())
        clone.set_params([p.astype(dtype or p.dtype) for p in self.params()])
        return clone

    def __repr__(self):
        hp = ", ".join(f"{k}={v}" for k, v in self.hyperparams().items())
        return f"{type(self).__name__}({hp})"


class Dense(Layer):
    """Affine map: ``y = x @ w + b`` with ``w`` stored ``(in_dim, out_dim)``."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.w = np.zeros((self.in_dim, self.out_dim), dtype=np.float32)
        self.b = np.zeros(self.out_dim, dtype=np.float32)

    def hyperparams(self):
        return {"in_dim": self.in_dim, "out_dim": self.out_dim}

    def params(self):
        return [self.w, self.b]

    def set_params(self, values):
        w, b = values
        if w.shape != (self.in_dim, self.out_dim) or b.shape != (self.out_dim,):
            raise ShapeError(
                f"dense expects weights {(self.in_dim, self.out_dim)} and bias "
                f"{(self.out_dim,)}, got {w.shape} and {b.shape}"
            )
        self.w, self.b = w, b

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ShapeError(f"dense(in_dim={self.in_dim}) cannot take input shape {in_shape}")
        return (self.out_dim,)

    def forward(self, x, ctx=None):
        if ctx is not None:
            ctx["x"] = x
        return x @ self.w + self.b

    def backward(self, dy, ctx):
        x = ctx["x"]
        dx = dy @ self.w.T
        dw = x.T @ dy
        db = dy.sum(axis=0)
        return dx, [dw, db]


class Conv2D(Layer):
    """2-D convolution, NHWC layout, kernel ``(kh, kw, in_ch, out_ch)``."""

    kind = "conv2d"

    def __init__(self, kernel_h: int, kernel_w: int, in_ch: int, out_ch: int,
                 stride: int = 1, padding: int = 0):
        self.kernel_h = int(kernel_h)
        self.kernel_w = int(kernel_w)
        self.in_ch = int(in_ch)
        self.out_ch = int(out_ch)
        self.stride = int(stride)
        self.padding = int(padding)
        if self.stride < 1 or self.padding < 0:
            raise ConfigError("conv2d requires stride >= 1 and padding >= 0")
        self.kernel = np.zeros((self.kernel_h, self.kernel_w, self.in_ch, self.out_ch),
                               dtype=np.float32)
        self.bias = np.zeros(self.out_ch, dtype=np.float32)

    def hyperparams(self):
        return {"kernel_h": self.kernel_h, "kernel_w": self.kernel_w,
                "in_ch": self.in_ch, "out_ch": self.out_ch,
                "stride": self.stride, "padding": self.padding}

    def params(self):
        return [self.kernel, self.bias]

    def set_params(self, values):
        kernel, bias = values
        want = (self.kernel_h, self.kernel_w, self.in_ch, self.out_ch)
        if kernel.shape != want or bias.shape != (self.out_ch,):
            raise ShapeError(f"conv2d expects kernel {want} and bias {(self.out_ch,)}, "
                             f"got {kernel.shape} and {bias.shape}")
        self.kernel, self.bias = kernel, bias

    def _geometry(self, in_shape):
        h, w, c = in_shape
        if c != self.in_ch:
            raise ShapeError(f"conv2d(in_ch={self.in_ch}) cannot take input shape {in_shape}")
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv2d kernel {self.kernel_h}x{self.kernel_w} too large "
                             f"for input shape {in_shape}")
        return oh, ow

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d needs (H, W, C) input, got shape {in_shape}")
        oh, ow = self._geometry(in_shape)
        return (oh, ow, self.out_ch)

    def _im2col(self, xp, oh, ow):
        n = xp.shape[0]
        s = self.stride
        cols = np.empty((n, oh, ow, self.kernel_h, self.kernel_w, self.in_ch), dtype=xp.dtype)
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                cols[:, :, :, i, j, :] = xp[:, i:i + s * oh:s, j:j + s * ow:s, :]
        return cols

    def forward(self, x, ctx=None):
        n, h, w, _ = x.shape
        oh, ow = self._geometry(x.shape[1:])
        p = self.padding
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        cols = self._im2col(xp, oh, ow)
        flat = cols.reshape(n * oh * ow, -1)
        wmat = self.kernel.reshape(-1, self.out_ch)
        y = flat @ wmat + self.bias
        if ctx is not None:
            ctx["flat"] = flat
            ctx["in_shape"] = x.shape
            ctx["geom"] = (oh, ow)
        return y.reshape(n, oh, ow, self.out_ch)

    def backward(self, dy, ctx):
        n, h, w, c = ctx["in_shape"]
        oh, ow = ctx["geom"]
        p, s = self.padding, self.stride
        dy_mat = dy.reshape(n * oh * ow, self.out_ch)
        wmat = self.kernel.reshape(-1, self.out_ch)
        dkernel = (ctx["flat"].T @ dy_mat).reshape(self.kernel.shape)
        dbias = dy_mat.sum(axis=0)
        dcols = (dy_mat @ wmat.T).reshape(n, oh, ow, self.kernel_h, self.kernel_w, self.in_ch)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dy.dtype)
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += dcols[:, :, :, i, j, :]
        dx = dxp[:, p:p + h, p:p + w, :] if p else dxp
        return dx, [dkernel, dbias]


class ReLU(Layer):
    kind = "relu"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, ctx=None):
        if ctx is not None:
            ctx["mask"] = x > 0
        return np.maximum(x, 0)

    def backward(self, dy, ctx):
        return dy * ctx["mask"], []


class MaxPool2D(Layer):
    """Max pooling with square window; gradient routes to the first maximum."""

    kind = "maxpool2d"

    def __init__(self, window: int, stride: int | None = None):
        self.window = int(window)
        self.stride = int(stride) if stride is not None else self.window
        if self.window < 1 or self.stride < 1:
            raise ConfigError("maxpool2d requires window >= 1 and stride >= 1")

    def hyperparams(self):
        return {"window": self.window, "stride": self.stride}

    def _geometry(self, in_shape):
        h, w, _ = in_shape
        oh = (h - self.window) // self.stride + 1
        ow = (w - self.window) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"maxpool2d window {self.window} too large for input shape {in_shape}")
        return oh, ow

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2d needs (H, W, C) input, got shape {in_shape}")
        oh, ow = self._geometry(in_shape)
        return (oh, ow, in_shape[2])

    def forward(self, x, ctx=None):
        oh, ow = self._geometry(x.shape[1:])
        s = self.stride
        best = None
        offsets = None
        for idx in range(self.window * self.window):
            i, j = divmod(idx, self.window)
            cand = x[:, i:i + s * oh:s, j:j + s * ow:s, :]
            if best is None:
                best = cand.copy()
                offsets = np.zeros(cand.shape, dtype=np.int8)
            else:
                upd = cand > best  # strict: ties stay with the earlier window cell
                np.copyto(best, cand, where=upd)
                np.copyto(offsets, idx, where=upd)
        if ctx is not None:
            ctx["offsets"] = offsets
            ctx["in_shape"] = x.shape
            ctx["geom"] = (oh, ow)
        return best

    def backward(self, dy, ctx):
        oh, ow = ctx["geom"]
        s = self.stride
        offsets = ctx["offsets"]
        dx = np.zeros(ctx["in_shape"], dtype=dy.dtype)
        for idx in range(self.window * self.window):
            i, j = divmod(idx, self.window)
            dx[:, i:i + s * oh:s, j:j + s * ow:s, :] += dy * (offsets == idx)
        return dx, []


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, ctx=None):
        if ctx is not None:
            ctx["in_shape"] = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, ctx):
        return dy.reshape(ctx["in_shape"]), []


class Softmax(Layer):
    kind = "softmax"

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"softmax needs a flat input, got shape {in_shape}")
        return in_shape

    def forward(self, x, ctx=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        if ctx is not None:
            ctx["p"] = p
        return p

    def backward(self, dy, ctx):
        p = ctx["p"]
        dot = (dy * p).sum(axis=-1, keepdims=True)
        return p * (dy - dot), []


class Dropout(Layer):
    """Inverted dropout: active only when a mask is supplied (MC or training)."""

    kind = "dropout"

    def __init__(self, rate: float):
        rate = float(rate)
        if not 0.0 < rate < 1.0:
            raise ConfigError(f"dropout rate must lie in (0, 1), got {rate}")
        self.rate = rate

    def hyperparams(self):
        return {"rate": self.rate}

    def out_shape(self, in_shape):
        return in_shape

    def sample_mask(self, shape, generator) -> np.ndarray:
        """Bernoulli keep mask pre-scaled by 1/(1-rate)."""
        keep = generator.random(shape) >= self.rate
        return keep.astype(np.float32) / np.float32(1.0 - self.rate)

    def forward(self, x, ctx=None, mask=None):
        if mask is None:
            return x  # deterministic mode: identity
        y = x * mask
        if ctx is not None:
            ctx["mask"] = mask
        return y

    def backward(self, dy, ctx):
        mask = ctx.get("mask")
        return (dy if mask is None else dy * mask), []


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2D, ReLU, MaxPool2D, Flatten, Softmax, Dropout)}
