"""Differentiable operations over Tensor.

Convolution follows the deep-learning convention (cross-correlation, no
kernel flip). All ops validate shapes up front and raise ShapeError naming
the offending axis. relu's subgradient at exactly 0 is 0.
"""
import numpy as np

from .kernels import col2im, im2col
from .tensor import FLOAT_DTYPES, ShapeError, Tensor, accumulate_grad, make_result


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _require_float(t, what):
    if t.dtype not in FLOAT_DTYPES:
        raise ValueError(f"{what} requires a float tensor, got dtype {t.dtype}")


def _check_broadcast(a_shape, b_shape):
    """Validate numpy broadcasting; report the first offending axis pair."""
    ra, rb = len(a_shape), len(b_shape)
    for i in range(1, min(ra, rb) + 1):
        da, db = a_shape[-i], b_shape[-i]
        if da != db and da != 1 and db != 1:
            raise ShapeError(
                f"shapes {a_shape} and {b_shape} do not broadcast: axis -{i} "
                f"has extents {da} and {db}")


def _unbroadcast(g, shape):
    """Sum g down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# pointwise ops

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data + b.data

    def backward(g):
        accumulate_grad(a, _unbroadcast(g, a.shape))
        accumulate_grad(b, _unbroadcast(g, b.shape))

    return make_result(out_data, (a, b), backward)


def sub(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data - b.data

    def backward(g):
        accumulate_grad(a, _unbroadcast(g, a.shape))
        accumulate_grad(b, _unbroadcast(-g, b.shape))

    return make_result(out_data, (a, b), backward)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_broadcast(a.shape, b.shape)
    a_data, b_data = a.data, b.data
    out_data = a_data * b_data

    def backward(g):
        accumulate_grad(a, _unbroadcast(g * b_data, a.shape))
        accumulate_grad(b, _unbroadcast(g * a_data, b.shape))

    return make_result(out_data, (a, b), backward)


def neg(a):
    def backward(g):
        accumulate_grad(a, -g)

    return make_result(-a.data, (a,), backward)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0  # strict: subgradient at 0 is 0

    def backward(g):
        accumulate_grad(a, g * mask)

    return make_result(np.where(mask, a.data, 0), (a,), backward)


def tanh(a):
    out_data = np.tanh(a.data)

    def backward(g):
        accumulate_grad(a, g * (1 - out_data * out_data))

    return make_result(out_data, (a,), backward)


def sigmoid(a):
    out_data = _sigmoid_stable(a.data)

    def backward(g):
        accumulate_grad(a, g * out_data * (1 - out_data))

    return make_result(out_data, (a,), backward)


def softplus(a):
    """log(1 + exp(x)), computed without overflow."""
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        accumulate_grad(a, g * _sigmoid_stable(x))

    return make_result(out_data, (a,), backward)


def _sigmoid_stable(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ELEMENTWISE = {"relu": relu, "add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid}


def elementwise(op, *args):
    """Dispatch a named pointwise op: one of relu/add/mul/tanh/sigmoid."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}")
    return fn(*args)


# ---------------------------------------------------------------------------
# reductions and reshaping

def mean(a):
    n = a.data.size

    def backward(g):
        accumulate_grad(a, np.full_like(a.data, g / n))

    return make_result(np.asarray(a.data.mean(), dtype=a.dtype), (a,), backward)


def tsum(a):
    def backward(g):
        accumulate_grad(a, np.full_like(a.data, g))

    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward)


def reshape(a, shape):
    old_shape = a.shape

    def backward(g):
        accumulate_grad(a, g.reshape(old_shape))

    return make_result(a.data.reshape(shape), (a,), backward)


def concat(tensors, axis=1):
    tensors = list(tensors)
    base = tensors[0]
    for i, t in enumerate(tensors[1:], start=1):
        for ax in range(base.ndim):
            if ax != axis % base.ndim and t.shape[ax] != base.shape[ax]:
                raise ShapeError(
                    f"concat input {i} has extent {t.shape[ax]} on axis {ax}, "
                    f"expected {base.shape[ax]}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            accumulate_grad(t, g[tuple(idx)])

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# ---------------------------------------------------------------------------
# linear algebra

def linear(x, weight, bias=None):
    """Affine map of rows: (N, D) @ (D, M) + (M,)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear inner axes disagree: input axis 1 is {x.shape[1]}, weight axis 0 is {weight.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear bias shape {bias.shape} does not match output width {weight.shape[1]}")
    x_data, w_data = x.data, weight.data
    out_data = x_data @ w_data
    if bias is not None:
        out_data = out_data + bias.data

    def backward(g):
        accumulate_grad(x, g @ w_data.T)
        accumulate_grad(weight, x_data.T @ g)
        if bias is not None:
            accumulate_grad(bias, g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out_data, parents, backward)


# ---------------------------------------------------------------------------
# convolution

def _conv_checks(x, weight, bias, stride, padding, transposed):
    if x.ndim != 4:
        raise ShapeError(f"expected 4-d NCHW input, got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"expected 4-d weight, got shape {weight.shape}")
    _require_float(x, "conv")
    k1, k2 = weight.shape[2], weight.shape[3]
    if k1 != k2:
        raise ShapeError(f"kernel must be square, got {k1}x{k2}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    c_axis = 0 if transposed else 1
    if weight.shape[c_axis] != x.shape[1]:
        raise ShapeError(
            f"channel axis mismatch: input has {x.shape[1]} channels (axis 1), "
            f"weight expects {weight.shape[c_axis]} (axis {c_axis})")
    out_ch = weight.shape[1] if transposed else weight.shape[0]
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError(f"bias shape {bias.shape} does not match {out_ch} output channels")
    return k1, out_ch


def _pad_hw(arr, padding):
    if padding == 0:
        return np.ascontiguousarray(arr)
    return np.pad(arr, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of (N,C,H,W) with (O,C,k,k); H' = (H+2p-k)//s + 1.

    k must be odd and H+2p >= k.
    """
    k, out_ch = _conv_checks(x, weight, bias, stride, padding, transposed=False)
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel extent must be odd, got {k}")
    n, c, h, w = x.shape
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(
            f"spatial extents {h}x{w} with padding {padding} are smaller than kernel {k}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1

    xp = _pad_hw(x.data, padding)
    cols = im2col(xp, k, stride)                       # (N, C*k*k, ho*wo)
    w2 = weight.data.reshape(out_ch, c * k * k)
    out_flat = np.matmul(w2, cols)                     # (N, O, ho*wo)
    out_data = out_flat.reshape(n, out_ch, ho, wo)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, out_ch, 1, 1)

    # flags captured at graph-build time; cols only kept for the weight gradient
    needs_w, needs_x = weight.requires_grad, x.requires_grad
    cols_saved = cols if needs_w else None

    def backward(g):
        gf = np.ascontiguousarray(g.reshape(n, out_ch, ho * wo))
        if bias is not None:
            accumulate_grad(bias, gf.sum(axis=(0, 2)))
        if needs_w:
            gw = np.matmul(gf, cols_saved.transpose(0, 2, 1)).sum(axis=0)
            accumulate_grad(weight, gw.reshape(weight.shape))
        if needs_x:
            gcols = np.ascontiguousarray(np.matmul(w2.T, gf))
            gxp = col2im(gcols, k, stride, h + 2 * padding, w + 2 * padding)
            if padding:
                gxp = gxp[:, :, padding:padding + h, padding:padding + w]
            accumulate_grad(x, gxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out_data, parents, backward)


def deconv2d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution: weight (C,O,k,k), output extent (H-1)*s - 2p + k.

    Each input pixel scatter-adds a weighted kernel patch into the output.
    """
    k, out_ch = _conv_checks(x, weight, bias, stride, padding, transposed=True)
    n, c, h, w = x.shape
    ho = (h - 1) * stride - 2 * padding + k
    wo = (w - 1) * stride - 2 * padding + k
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"deconv output extent {ho}x{wo} is empty for input {h}x{w}, "
            f"stride {stride}, padding {padding}, kernel {k}")

    x_flat = np.ascontiguousarray(x.data.reshape(n, c, h * w))
    wd = weight.data.reshape(c, out_ch * k * k)
    cols = np.ascontiguousarray(np.matmul(wd.T, x_flat))   # (N, O*k*k, H*W)
    outp = col2im(cols, k, stride, ho + 2 * padding, wo + 2 * padding)
    out_data = outp[:, :, padding:padding + ho, padding:padding + wo] if padding else outp
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, out_ch, 1, 1)

    needs_w, needs_x = weight.requires_grad, x.requires_grad
    x_saved = x_flat if needs_w else None

    def backward(g):
        if bias is not None:
            accumulate_grad(bias, g.sum(axis=(0, 2, 3)))
        gp = _pad_hw(g, padding)
        gcols = im2col(gp, k, stride)                      # (N, O*k*k, H*W)
        if needs_x:
            gx = np.matmul(wd, gcols).reshape(n, c, h, w)
            accumulate_grad(x, gx)
        if needs_w:
            gw = np.matmul(x_saved, gcols.transpose(0, 2, 1)).sum(axis=0)
            accumulate_grad(weight, gw.reshape(weight.shape))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out_data, parents, backward)


# ---------------------------------------------------------------------------
# graph aggregation over a patch axis

def graph_aggregate(patch_stack, weights):
    """Mix patches along axis 0: out[p] = sum_q weights[p, q] * stack[q].

    ``weights`` is a constant (non-learnable) symmetric matrix. The exact
    identity matrix is passed through untouched so that a 1x1 grid is
    bit-for-bit a standard convolution path.
    """
    a = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"aggregation weights must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("aggregation weights must be symmetric")
    p = patch_stack.shape[0]
    if a.shape[0] != p:
        raise ShapeError(
            f"aggregation weights are {a.shape[0]}x{a.shape[0]} but the stack has "
            f"{p} patches on axis 0")

    if a.shape[0] == a.shape[1] and np.array_equal(a, np.eye(p, dtype=a.dtype)):
        def backward_id(g):
            accumulate_grad(patch_stack, g)
        return make_result(patch_stack.data, (patch_stack,), backward_id)

    a = a.astype(patch_stack.dtype, copy=False)
    out_data = np.tensordot(a, patch_stack.data, axes=([1], [0]))

    def backward(g):
        accumulate_grad(patch_stack, np.tensordot(a.T, g, axes=([1], [0])))

    return make_result(out_data, (patch_stack,), backward)
