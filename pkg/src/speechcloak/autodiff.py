"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every forward op registers per-parent vector-Jacobian products; `backward`
walks the graph once in reverse topological order and accumulates gradients
into leaf tensors.  Storage is float64 throughout so finite-difference
gradient checks stay tight.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class NonScalarLossError(ValueError):
    pass


def _as_f64(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A node in the computation graph wrapping an ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_vjps", "op")

    def __init__(self, data, requires_grad=False, vjps=(), op="leaf"):
        self.data = _as_f64(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._vjps = tuple(vjps)  # (parent Tensor, fn(upstream)->grad wrt parent)
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def is_leaf(self):
        return not self._vjps

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # light operator sugar; the module-level functions are the real API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)


class Parameter(Tensor):
    """Trainable leaf with a zero-initialized gradient and Adam state."""

    __slots__ = ("name", "adam_m", "adam_v", "adam_step_count")

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.adam_step_count = 0

    def zero_grad(self):
        self.grad[...] = 0.0


def constant(data):
    return Tensor(data, requires_grad=False, op="const")


def _node(data, vjps, op):
    vjps = [(p, fn) for p, fn in vjps if p.requires_grad]
    return Tensor(data, requires_grad=bool(vjps), vjps=vjps, op=op)


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _check_same_shape(opname, a, b):
    if a.data.shape != b.data.shape:
        try:
            np.broadcast_shapes(a.data.shape, b.data.shape)
        except ValueError:
            raise ShapeMismatchError(
                f"{opname}: incompatible shapes {a.data.shape} vs {b.data.shape}"
            ) from None


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _node(
        a.data + b.data,
        [(a, lambda g: _unbroadcast(g, a.data.shape)),
         (b, lambda g: _unbroadcast(g, b.data.shape))],
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _node(
        a.data - b.data,
        [(a, lambda g: _unbroadcast(g, a.data.shape)),
         (b, lambda g: -_unbroadcast(g, b.data.shape))],
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return _node(
        a.data * b.data,
        [(a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
         (b, lambda g: _unbroadcast(g * a.data, b.data.shape))],
        "mul",
    )


def scalar_mul(a: Tensor, s) -> Tensor:
    s = float(s)
    return _node(a.data * s, [(a, lambda g: g * s)], "scalar_mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatchError(
            f"matmul: need (m,k)@(k,n), got {a.data.shape} @ {b.data.shape}"
        )
    return _node(
        a.data @ b.data,
        [(a, lambda g: g @ b.data.T), (b, lambda g: a.data.T @ g)],
        "matmul",
    )


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, [(a, lambda g: g * (1.0 - y * y))], "tanh")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, [(a, lambda g: g * y)], "exp")


def expm1(a: Tensor) -> Tensor:
    y = np.expm1(a.data)
    return _node(y, [(a, lambda g: g * (y + 1.0))], "expm1")


def log1p(a: Tensor) -> Tensor:
    if np.any(a.data <= -1.0):
        raise ValueError("log1p: input must stay above -1")
    return _node(np.log1p(a.data), [(a, lambda g: g / (1.0 + a.data))], "log1p")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)], "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0
    y = np.where(mask, a.data, slope * a.data)
    return _node(y, [(a, lambda g: g * np.where(mask, 1.0, slope))], "leaky_relu")


def prelu(a: Tensor, slope: Tensor) -> Tensor:
    """PReLU with a single learned scalar slope."""
    if slope.data.size != 1:
        raise ShapeMismatchError(f"prelu: slope must be scalar, got {slope.data.shape}")
    s = float(slope.data.reshape(()))
    mask = a.data > 0
    neg = np.where(mask, 0.0, a.data)
    y = np.where(mask, a.data, s * a.data)
    return _node(
        y,
        [(a, lambda g: g * np.where(mask, 1.0, s)),
         (slope, lambda g: np.full_like(slope.data, np.sum(g * neg)))],
        "prelu",
    )


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(
        np.asarray(a.data.mean()),
        [(a, lambda g: np.full_like(a.data, float(g) / n))],
        "mean",
    )


def mean_axes(a: Tensor, axes, keepdims=False) -> Tensor:
    axes = tuple(axes)
    n = int(np.prod([a.data.shape[ax] for ax in axes]))
    y = a.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return np.broadcast_to(gk, a.data.shape) / n

    return _node(y, [(a, back)], "mean_axes")


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"mse: shapes {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    n = diff.size
    return _node(
        np.asarray(np.mean(diff * diff)),
        [(a, lambda g: (2.0 * float(g) / n) * diff),
         (b, lambda g: (-2.0 * float(g) / n) * diff)],
        "mse",
    )


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape or a.data.ndim != 1:
        raise ShapeMismatchError(
            f"cosine_similarity: need equal 1-D vectors, got {a.data.shape} vs {b.data.shape}"
        )
    na = max(float(np.linalg.norm(a.data)), 1e-12)
    nb = max(float(np.linalg.norm(b.data)), 1e-12)
    s = float(a.data @ b.data) / (na * nb)

    def back_a(g):
        return float(g) * (b.data / (na * nb) - s * a.data / (na * na))

    def back_b(g):
        return float(g) * (a.data / (na * nb) - s * b.data / (nb * nb))

    return _node(np.asarray(s), [(a, back_a), (b, back_b)], "cosine_similarity")


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize along the last axis."""
    n = np.maximum(np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True)), eps)
    y = a.data / n

    def back(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (g - y * dot) / n

    return _node(y, [(a, back)], "l2_normalize")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _node(a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))], "reshape")


def concat(tensors, axis=0) -> Tensor:
    datas = [t.data for t in tensors]
    y = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)
    vjps = []
    for i, t in enumerate(tensors):
        lo, hi = offsets[i], offsets[i + 1]

        def back(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        vjps.append((t, back))
    return _node(y, vjps, "concat")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def back(g):
        out = np.zeros_like(a.data)
        out[sl] = g
        return out

    return _node(a.data[sl].copy(), [(a, back)], "narrow")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over a batch of logits; labels are int class ids."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
        raise ShapeMismatchError(
            f"softmax_cross_entropy: logits {logits.data.shape}, labels {labels.shape}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = labels.shape[0]
    nll = -np.mean(np.log(np.maximum(p[np.arange(n), labels], 1e-300)))

    def back(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        return (float(g) / n) * d

    return _node(np.asarray(nll), [(logits, back)], "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# convolution machinery (NCHW)


def _conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp, kh, kw, sh, sw, oh, ow):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols, n, c, kh, kw, sh, sw, oh, ow, hp, wp):
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += cols[:, :, i, j]
    return xp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D convolution, x (N,C,H,W), weight (O,C,kh,kw), zero padding."""
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.data.shape[1] != weight.data.shape[1]:
        raise ShapeMismatchError(
            f"conv2d: x {x.data.shape} incompatible with weight {weight.data.shape}"
        )
    n, c, h, w = x.data.shape
    o, _, kh, kw = weight.data.shape
    sh, sw = stride
    ph, pw = padding
    oh = _conv_out_size(h, kh, sh, ph)
    ow = _conv_out_size(w, kw, sw, pw)
    if oh < 1 or ow < 1:
        raise ShapeMismatchError(
            f"conv2d: output would be empty for input {x.data.shape}, "
            f"kernel {(kh, kw)}, stride {stride}, padding {padding}"
        )
    hp, wp = h + 2 * ph, w + 2 * pw
    if ph or pw:
        xp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
        xp[:, :, ph:ph + h, pw:pw + w] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)      # (N, C*kh*kw, OH*OW)
    w2 = weight.data.reshape(o, -1)
    y = np.matmul(w2, cols).reshape(n, o, oh, ow)
    if bias is not None:
        y = y + bias.data.reshape(1, o, 1, 1)

    def back_x(g):
        gf = g.reshape(n, o, -1)
        dcols = np.matmul(w2.T, gf)
        dxp = _col2im(dcols, n, c, kh, kw, sh, sw, oh, ow, hp, wp)
        return dxp[:, :, ph:ph + h, pw:pw + w]

    def back_w(g):
        gf = g.reshape(n, o, -1)
        return np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape)

    vjps = [(x, back_x), (weight, back_w)]
    if bias is not None:
        vjps.append((bias, lambda g: g.sum(axis=(0, 2, 3))))
    return _node(y, vjps, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride=(2, 2), padding=(0, 0), output_padding=(0, 0)) -> Tensor:
    """Transposed 2-D convolution, x (N,C,H,W), weight (C,O,kh,kw)."""
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.data.shape[1] != weight.data.shape[0]:
        raise ShapeMismatchError(
            f"conv_transpose2d: x {x.data.shape} incompatible with weight {weight.data.shape}"
        )
    n, c, h, w = x.data.shape
    _, o, kh, kw = weight.data.shape
    sh, sw = stride
    ph, pw = padding
    oph, opw = output_padding
    hc = (h - 1) * sh + kh          # canvas before crop / output padding
    wc = (w - 1) * sw + kw
    oh = hc - 2 * ph + oph
    ow = wc - 2 * pw + opw
    if oh < 1 or ow < 1 or oph >= sh or opw >= sw:
        raise ShapeMismatchError(
            f"conv_transpose2d: bad geometry for input {x.data.shape}, stride {stride}, "
            f"padding {padding}, output_padding {output_padding}"
        )
    w2 = weight.data.reshape(c, o * kh * kw)
    xf = x.data.reshape(n, c, h * w)
    cols = np.matmul(w2.T, xf)                       # (N, O*kh*kw, H*W)
    canvas = _col2im(cols, n, o, kh, kw, sh, sw, h, w, hc + oph, wc + opw)
    y = canvas[:, :, ph:ph + oh, pw:pw + ow]
    if bias is not None:
        y = y + bias.data.reshape(1, o, 1, 1)

    def _pad_grad(g):
        full = np.zeros((n, o, hc + oph, wc + opw), dtype=g.dtype)
        full[:, :, ph:ph + oh, pw:pw + ow] = g
        return full

    def back_x(g):
        dcols = _im2col(_pad_grad(g), kh, kw, sh, sw, h, w)
        return np.matmul(w2, dcols).reshape(n, c, h, w)

    def back_w(g):
        dcols = _im2col(_pad_grad(g), kh, kw, sh, sw, h, w)
        return np.matmul(xf, dcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape)

    vjps = [(x, back_x), (weight, back_w)]
    if bias is not None:
        vjps.append((bias, lambda g: g.sum(axis=(0, 2, 3))))
    return _node(y, vjps, "conv_transpose2d")


def reflection_pad2d(x: Tensor, padding=(1, 1)) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"reflection_pad2d: need NCHW, got {x.data.shape}")
    ph, pw = padding
    n, c, h, w = x.data.shape
    if h <= ph or w <= pw:
        raise ShapeMismatchError(
            f"reflection_pad2d: input {x.data.shape} too small for padding {padding}"
        )
    ih = np.concatenate([np.arange(ph, 0, -1), np.arange(h), np.arange(h - 2, h - 2 - ph, -1)])
    iw = np.concatenate([np.arange(pw, 0, -1), np.arange(w), np.arange(w - 2, w - 2 - pw, -1)])
    y = x.data[:, :, ih][:, :, :, iw]

    def back(g):
        t = np.zeros((n, c, h, w + 2 * pw), dtype=g.dtype)
        np.add.at(t, (slice(None), slice(None), ih), g)
        out = np.zeros((n, c, h, w), dtype=g.dtype)
        np.add.at(out, (slice(None), slice(None), slice(None), iw), t)
        return out

    return _node(y, [(x, back)], "reflection_pad2d")


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
                 train: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm over (N,H,W).  `running_*` are plain arrays
    mutated in train mode; eval mode is a deterministic affine map."""
    if x.data.ndim != 4 or gamma.data.shape != (x.data.shape[1],):
        raise ShapeMismatchError(
            f"batch_norm2d: x {x.data.shape}, gamma {gamma.data.shape}"
        )
    c = x.data.shape[1]
    if train:
        m = x.data.mean(axis=(0, 2, 3))
        v = x.data.var(axis=(0, 2, 3))
        cnt = x.data.size // c
        unbiased = v * cnt / max(cnt - 1, 1)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * m
        running_var *= (1.0 - momentum)
        running_var += momentum * unbiased
    else:
        m = running_mean
        v = running_var
    inv_std = 1.0 / np.sqrt(v + eps)
    xhat = (x.data - m.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    y = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    if train:
        def back_x(g):
            cnt = x.data.size // c
            gg = g * gamma.data.reshape(1, c, 1, 1)
            sum_gg = gg.sum(axis=(0, 2, 3), keepdims=True)
            sum_gg_xhat = (gg * xhat).sum(axis=(0, 2, 3), keepdims=True)
            return (inv_std.reshape(1, c, 1, 1) / cnt) * (
                cnt * gg - sum_gg - xhat * sum_gg_xhat
            )
    else:
        def back_x(g):
            return g * (gamma.data * inv_std).reshape(1, c, 1, 1)

    return _node(
        y,
        [(x, back_x),
         (gamma, lambda g: (g * xhat).sum(axis=(0, 2, 3))),
         (beta, lambda g: g.sum(axis=(0, 2, 3)))],
        "batch_norm2d",
    )


# ---------------------------------------------------------------------------
# backward pass and optimizers


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._vjps:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents before children


def backward(loss: Tensor):
    """Populate gradients of every reachable leaf (accumulating across calls)."""
    if loss.data.size != 1:
        raise NonScalarLossError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf():
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, fn in node._vjps:
            pg = fn(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction; gradients must be populated."""
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.adam_step_count += 1
        t = p.adam_step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        mhat = p.adam_m / (1.0 - beta1 ** t)
        vhat = p.adam_v / (1.0 - beta2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


def zero_grads(params):
    for p in params:
        p.zero_grad()


def pgd_step(x: np.ndarray, grad: np.ndarray, step_size: float) -> np.ndarray:
    """Signed gradient-descent step; sign(0) = 0."""
    if x.shape != grad.shape:
        raise ShapeMismatchError(f"pgd_step: shapes {x.shape} vs {grad.shape}")
    return x - step_size * np.sign(grad)
