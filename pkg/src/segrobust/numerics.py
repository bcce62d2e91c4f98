"""Dense float64 numerics: stable elementwise primitives, same-padding
convolution with explicit adjoints, resizing, and the central-difference
gradient oracle used to verify every analytical gradient in the package.

Arrays are plain C-order float64 ndarrays; elementwise add/mul and
axis reductions (sum, mean) are numpy's own and are not wrapped.
There is no autodiff graph: each differentiable operation exposes an
explicit forward/backward pair.
"""

from typing import Callable

import numpy as np

from .errors import UsageError


def as_tensor(x) -> np.ndarray:
    """Coerce to a float64 ndarray without copying when already one."""
    return np.asarray(x, dtype=np.float64)


def logsumexp(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(sum(exp(v))) along `axis`, max-shifted so large inputs cannot
    overflow."""
    v = as_tensor(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise UsageError("logsumexp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    out = m.squeeze(axis) + np.log(np.sum(np.exp(v - m), axis=axis))
    return out if out.ndim else float(out)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax along `axis`; output sums to 1."""
    v = as_tensor(v)
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x) -> np.ndarray:
    """Logistic function, stable for large |x| (no overflow in exp)."""
    x = as_tensor(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(as_tensor(x) > 0.0, as_tensor(grad_out), 0.0)


# ---------------------------------------------------------------------------
# Convolution (cross-correlation, stride 1, zero same-padding)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patch matrix of shape (H*W, kh*kw*Cin) for same-padding windows."""
    H, W, C = x.shape
    xp = np.pad(x, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    # (H, W, C, kh, kw) -> rows ordered (kh, kw, C) to match kernel layout
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(H * W, kh * kw * C)


def _check_conv_shapes(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None) -> None:
    if x.ndim != 3 or kernel.ndim != 4:
        raise UsageError(f"conv2d expects (H,W,Cin) input and (kh,kw,Cin,Cout) kernel, "
                         f"got {x.shape} and {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise UsageError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if x.shape[2] != cin:
        raise UsageError(f"conv2d channel mismatch: input has {x.shape[2]}, kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise UsageError(f"conv2d bias must have shape ({cout},), got {bias.shape}")


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Same-padding stride-1 cross-correlation of an (H,W,Cin) map with a
    (kh,kw,Cin,Cout) kernel; output is (H,W,Cout)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    bias = None if bias is None else as_tensor(bias)
    _check_conv_shapes(x, kernel, bias)
    out, _ = _conv2d_cols(x, kernel, bias)
    return out


def _conv2d_cols(x, kernel, bias):
    """conv2d returning the patch matrix too, so backward can reuse it."""
    kh, kw, cin, cout = kernel.shape
    H, W, _ = x.shape
    cols = _im2col(x, kh, kw)
    out = cols @ kernel.reshape(kh * kw * cin, cout)
    if bias is not None:
        out += bias
    return out.reshape(H, W, cout), cols


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, kernel: np.ndarray,
                    cols: np.ndarray | None = None):
    """Adjoints of conv2d: returns (grad_input, grad_kernel, grad_bias).

    grad_input is computed as a conv with the spatially flipped,
    channel-transposed kernel; grad_kernel as cols^T @ grad_out.
    """
    grad_out, x, kernel = as_tensor(grad_out), as_tensor(x), as_tensor(kernel)
    _check_conv_shapes(x, kernel, None)
    kh, kw, cin, cout = kernel.shape
    H, W, _ = x.shape
    if grad_out.shape != (H, W, cout):
        raise UsageError(f"grad_out shape {grad_out.shape} does not match output ({H},{W},{cout})")
    if cols is None:
        cols = _im2col(x, kh, kw)
    g = grad_out.reshape(H * W, cout)
    grad_kernel = (cols.T @ g).reshape(kh, kw, cin, cout)
    grad_bias = g.sum(axis=0)
    flipped = kernel[::-1, ::-1].transpose(0, 1, 3, 2)  # (kh,kw,Cout,Cin)
    grad_input, _ = _conv2d_cols(grad_out, np.ascontiguousarray(flipped), None)
    return grad_input, grad_kernel, grad_bias


# ---------------------------------------------------------------------------
# Resizing (corner-aligned sampling; identity at the native size)


def _src_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an (H,W) or (H,W,C) array.

    Resizing to the input size is the bit-for-bit identity.
    """
    img = as_tensor(img)
    if out_h < 1 or out_w < 1:
        raise UsageError("resize target must be at least 1x1")
    H, W = img.shape[:2]
    if (out_h, out_w) == (H, W):
        return img.copy()
    ys, xs = _src_coords(out_h, H), _src_coords(out_w, W)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = (ys - y0).reshape(-1, 1)
    fx = (xs - x0).reshape(1, -1)
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = img[y0[:, None], x0[None, :]] * (1 - fx) + img[y0[:, None], x1[None, :]] * fx
    bot = img[y1[:, None], x0[None, :]] * (1 - fx) + img[y1[:, None], x1[None, :]] * fx
    return top * (1 - fy) + bot * fy


def nearest_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned nearest-neighbour resize; works for integer label maps."""
    if out_h < 1 or out_w < 1:
        raise UsageError("resize target must be at least 1x1")
    H, W = arr.shape[:2]
    ys = np.rint(_src_coords(out_h, H)).astype(np.int64)
    xs = np.rint(_src_coords(out_w, W)).astype(np.int64)
    return arr[ys[:, None], xs[None, :]].copy()


# ---------------------------------------------------------------------------
# Gradient oracle


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                      eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at
    a time: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)."""
    x = as_tensor(x)
    grad = np.zeros_like(x)
    flat = x.reshape(-1).copy()
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(flat.reshape(x.shape))
        flat[i] = orig - eps
        fm = f(flat.reshape(x.shape))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a-b| / max(floor, |a|+|b|), the usual gradient-check metric."""
    a, b = as_tensor(a), as_tensor(b)
    denom = np.maximum(floor, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))
