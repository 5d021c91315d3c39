"""Differentiable layers with hand-written backward passes.

All activations are batch-first: ``(N, H, W, C)`` feature maps and ``(N, D)``
vectors. Layers compute in the dtype of their parameters (float32 for training,
float64 for gradient checking).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError, InvalidParameterError, InvalidShapeError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "softmax")
PROB_EPS = 1e-12


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# -- functional forms --------------------------------------------------------


def _same_pad(k: int) -> int:
    return k // 2


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: str = "valid"):
    """2-D cross-correlation, stride 1.

    ``x`` is (N, H, W, Cin), ``w`` is (K, K, Cin, F), ``b`` is (F,).
    Returns the output and a cache for :func:`conv2d_backward`.
    """
    if x.ndim != 4:
        raise InvalidShapeError(f"conv input must be (N, H, W, C), got {x.shape}")
    k, k2, cin, f = w.shape
    if k != k2 or x.shape[3] != cin:
        raise InvalidShapeError(f"filter {w.shape} does not match input channels {x.shape[3]}")
    if b.shape != (f,):
        raise InvalidShapeError(f"bias shape {b.shape} does not match {f} filters")
    if padding == "same":
        p = _same_pad(k)
        x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    elif padding != "valid":
        raise InvalidParameterError(f"unknown padding {padding!r}")
    n, h, wd, _ = x.shape
    if h < k or wd < k:
        raise InvalidShapeError(f"input {h}x{wd} smaller than {k}x{k} filter")
    ho, wo = h - k + 1, wd - k + 1
    # (N, Ho, Wo, C, K, K) -> (N, Ho, Wo, K, K, C) so columns match the filter layout.
    cols = sliding_window_view(x, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    cols = np.ascontiguousarray(cols).reshape(n * ho * wo, k * k * cin)
    out = cols @ w.reshape(k * k * cin, f) + b
    return out.reshape(n, ho, wo, f), (cols, x.shape, w, padding)


def conv2d_backward(dout: np.ndarray, cache, need_input_grad: bool = True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when not requested.

    Filter gradients sum the contributions of every output position, which is
    what makes the shared weights learn.
    """
    cols, xshape, w, padding = cache
    k, _, cin, f = w.shape
    n, ho, wo, _ = dout.shape
    g = dout.reshape(-1, f)
    dw = (cols.T @ g).reshape(w.shape)
    db = g.sum(axis=0)
    if not need_input_grad:
        return None, dw, db
    dcols = (g @ w.reshape(-1, f).T).reshape(n, ho, wo, k, k, cin)
    dx = np.zeros(xshape, dtype=dout.dtype)
    for dy in range(k):
        for dxo in range(k):
            dx[:, dy : dy + ho, dxo : dxo + wo, :] += dcols[:, :, :, dy, dxo, :]
    if padding == "same":
        p = _same_pad(k)
        dx = dx[:, p:-p, p:-p, :] if p else dx
    return dx, dw, db


def maxpool_forward(x: np.ndarray, window: int, stride: int | None = None):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a block are dropped."""
    stride = window if stride is None else stride
    if window < 1:
        raise InvalidParameterError("pool window must be >= 1")
    if stride != window:
        raise InvalidParameterError("only non-overlapping pooling (stride == window) is supported")
    n, h, w, c = x.shape
    if window > h or window > w:
        raise InvalidShapeError(f"pool window {window} larger than input {h}x{w}")
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    blocks = x[:, : ho * window, : wo * window, :].reshape(n, ho, window, wo, window, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, window * window)
    arg = blocks.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape, window)


def maxpool_backward(dout: np.ndarray, cache) -> np.ndarray:
    arg, xshape, window = cache
    n, ho, wo, c = dout.shape
    blocks = np.zeros((n, ho, wo, c, window * window), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, ho, wo, c, window, window).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(xshape, dtype=dout.dtype)
    dx[:, : ho * window, : wo * window, :] = blocks.reshape(n, ho * window, wo * window, c)
    return dx


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a = W x + b`` for each row of ``x``; ``w`` is (M, N)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise InvalidShapeError(f"dense shapes disagree: x {x.shape}, W {w.shape}, b {b.shape}")
    return x @ w.T + b


def dense_backward(g: np.ndarray, x: np.ndarray, w: np.ndarray):
    return g @ w, g.T @ x, g.sum(axis=0)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def activation_forward(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0)
    if kind == "tanh":
        return np.tanh(a)
    if kind == "sigmoid":
        # Split by sign so exp never overflows.
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out
    if kind == "softmax":
        return softmax(a, axis=-1)
    raise InvalidParameterError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_backward(kind: str, a: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the pre-activation ``a`` given output ``h`` and upstream ``g``."""
    if kind == "relu":
        return g * (a > 0)
    if kind == "tanh":
        return g * (1 - h * h)
    if kind == "sigmoid":
        return g * h * (1 - h)
    if kind == "softmax":
        return h * (g - (g * h).sum(axis=-1, keepdims=True))
    raise InvalidParameterError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def dropout_mask(shape: tuple[int, ...], keep_prob: float, seed: int, step: int) -> np.ndarray:
    """Boolean keep-mask drawn from a generator seeded by ``(seed, step)``."""
    rng = np.random.default_rng([seed, step])
    return rng.random(shape) < keep_prob


def _check_one_hot(target: np.ndarray) -> None:
    if not (np.isin(target, (0, 1)).all() and (target.sum(axis=-1) == 1).all()):
        raise InvalidInputError("target must be one-hot")


def cross_entropy(logits: np.ndarray, target: np.ndarray, form: str = "binary") -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    ``form="binary"`` sums ``-(t log y + (1 - t) log(1 - y))`` over classes with
    ``y = softmax(logits)`` clamped to ``[eps, 1 - eps]``; ``form="categorical"``
    uses ``-sum t log y``. Works on a single (K,) vector or an (N, K) batch.
    """
    single = logits.ndim == 1
    # float64 throughout: the 1 - eps clamp rounds to 1.0 in float32.
    z = np.atleast_2d(logits).astype(np.float64)
    t = np.atleast_2d(target).astype(np.float64)
    if z.shape != t.shape:
        raise InvalidShapeError(f"logits {z.shape} and target {t.shape} differ")
    if z.shape[1] < 2:
        raise InvalidShapeError("need at least two classes")
    _check_one_hot(t)
    n = z.shape[0]
    y = softmax(z)
    yc = np.clip(y, PROB_EPS, 1 - PROB_EPS)
    inside = (y > PROB_EPS) & (y < 1 - PROB_EPS)
    if form == "binary":
        per = -(t * np.log(yc) + (1 - t) * np.log(1 - yc)).sum(axis=1)
        dy = (-t / yc + (1 - t) / (1 - yc)) * inside
    elif form == "categorical":
        per = -(t * np.log(yc)).sum(axis=1)
        dy = (-t / yc) * inside
    else:
        raise InvalidParameterError(f"unknown loss form {form!r}")
    dz = (y * (dy - (dy * y).sum(axis=1, keepdims=True)) / n).astype(logits.dtype)
    loss = float(per.mean())
    return loss, (dz[0] if single else dz)


# -- layer objects -----------------------------------------------------------


class Layer:
    kind = "layer"
    params: dict[str, np.ndarray]
    grads: dict[str, np.ndarray]

    def __init__(self):
        self.params, self.grads = {}, {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray | None:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def describe(self) -> dict:
        return {"type": self.kind}


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_ch, out_ch, ksize, padding="valid", rng=None, dtype=np.float32, need_input_grad=True):
        super().__init__()
        if ksize % 2 == 0:
            raise InvalidParameterError(f"kernel size must be odd, got {ksize}")
        if out_ch < 1:
            raise InvalidParameterError("need at least one filter")
        rng = np.random.default_rng(0) if rng is None else rng
        self.ksize, self.padding, self.need_input_grad = ksize, padding, need_input_grad
        fan_in = ksize * ksize * in_ch
        self.params["w"] = he_uniform(rng, (ksize, ksize, in_ch, out_ch), fan_in, dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)
        self._cache = None

    def forward(self, x, training=False):
        out, self._cache = conv2d_forward(x, self.params["w"], self.params["b"], self.padding)
        return out

    def backward(self, g):
        dx, self.grads["w"], self.grads["b"] = conv2d_backward(g, self._cache, self.need_input_grad)
        return dx

    def output_shape(self, in_shape):
        h, w, c = in_shape
        k, _, cin, f = self.params["w"].shape
        if c != cin:
            raise InvalidShapeError(f"conv expects {cin} channels, got {c}")
        if self.padding == "same":
            return (h, w, f)
        if h < k or w < k:
            raise InvalidShapeError(f"input {h}x{w} smaller than {k}x{k} filter")
        return (h - k + 1, w - k + 1, f)

    def describe(self):
        k, _, cin, f = self.params["w"].shape
        return {"type": self.kind, "ksize": k, "in": cin, "out": f, "padding": self.padding}


class MaxPool2D(Layer):
    kind = "pool"

    def __init__(self, window, stride=None):
        super().__init__()
        if window < 1:
            raise InvalidParameterError("pool window must be >= 1")
        self.window = window
        self.stride = window if stride is None else stride
        self._cache = None

    def forward(self, x, training=False):
        out, self._cache = maxpool_forward(x, self.window, self.stride)
        return out

    def backward(self, g):
        return maxpool_backward(g, self._cache)

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if self.window > h or self.window > w:
            raise InvalidShapeError(f"pool window {self.window} larger than input {h}x{w}")
        return ((h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1, c)

    def describe(self):
        return {"type": self.kind, "window": self.window, "stride": self.stride}


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.params["w"] = he_uniform(rng, (n_out, n_in), n_in, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return dense_forward(x, self.params["w"], self.params["b"])

    def backward(self, g):
        dx, self.grads["w"], self.grads["b"] = dense_backward(g, self._x, self.params["w"])
        return dx

    def output_shape(self, in_shape):
        n_out, n_in = self.params["w"].shape
        if in_shape != (n_in,):
            raise InvalidShapeError(f"dense expects ({n_in},), got {in_shape}")
        return (n_out,)

    def describe(self):
        n_out, n_in = self.params["w"].shape
        return {"type": self.kind, "in": n_in, "out": n_out}


class Activation(Layer):
    kind = "act"

    def __init__(self, fn: str):
        super().__init__()
        if fn not in ACTIVATIONS:
            raise InvalidParameterError(f"unknown activation {fn!r}; expected one of {ACTIVATIONS}")
        self.fn = fn
        self._a = self._h = None

    def forward(self, x, training=False):
        self._a = x
        self._h = activation_forward(self.fn, x)
        return self._h

    def backward(self, g):
        return activation_backward(self.fn, self._a, self._h, g)

    def describe(self):
        return {"type": self.kind, "fn": self.fn}


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    kind = "dropout"

    def __init__(self, keep_prob: float = 0.8, seed: int = 0):
        super().__init__()
        if not 0.0 < keep_prob <= 1.0:
            raise InvalidParameterError(f"keep_prob must lie in (0, 1], got {keep_prob}")
        self.keep_prob, self.seed, self.step = keep_prob, seed, 0
        self._scale = None

    def forward(self, x, training=False):
        if not training or self.keep_prob == 1.0:
            self._scale = None
            return x
        keep = dropout_mask(x.shape, self.keep_prob, self.seed, self.step)
        self.step += 1
        self._scale = keep.astype(x.dtype) / x.dtype.type(self.keep_prob)
        return x * self._scale

    def backward(self, g):
        return g if self._scale is None else g * self._scale

    def describe(self):
        return {"type": self.kind, "keep_prob": self.keep_prob}
