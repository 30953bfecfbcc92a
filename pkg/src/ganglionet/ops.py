"""Dense tensor layer operations with hand-derived gradients.

All tensors are numpy arrays laid out as (batch, height, width, channels),
row-major. The network paths run in float32; the ops preserve the dtype of
their inputs so gradient checks can run in float64.
"""

from __future__ import annotations

import math

import numpy as np


# below this channel count a single im2col GEMM beats nine offset GEMMs
_OFFSET_MIN_CHANNELS = 8


def _pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Extract all same-padded kh x kw windows as rows of a matrix.

    Returns an array of shape (B*H*W, kh*kw*Cin); row layout matches a
    kernel reshaped from (kh, kw, Cin, Cout) to (kh*kw*Cin, Cout).
    """
    b, h, w, c = x.shape
    xp = _pad_same(x, kh, kw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # win: (B, H, W, C, kh, kw) -> (B, H, W, kh, kw, C)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, kh * kw * c)
    return np.ascontiguousarray(cols)


def _check_conv_shapes(x: np.ndarray, kernel: np.ndarray) -> None:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    kh, kw, cin, _ = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if x.shape[3] != cin:
        raise ValueError(
            f"conv2d channel mismatch: input shape {x.shape} has {x.shape[3]} channels, "
            f"kernel shape {kernel.shape} expects {cin}"
        )


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 2-D convolution.

    x: (B, H, W, Cin), kernel: (Kh, Kw, Cin, Cout) with odd Kh/Kw,
    bias: (Cout,). Output spatial extents equal the input's. Two GEMM
    lowerings with identical math but different float summation order are
    dispatched on the channel count; both are deterministic.
    """
    _check_conv_shapes(x, kernel)
    kh, kw, cin, cout = kernel.shape
    if bias.shape != (cout,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match Cout={cout}")
    b, h, w, _ = x.shape
    if kh == kw == 1:
        out = x.reshape(-1, cin) @ kernel.reshape(cin, cout) + bias
    elif cin < _OFFSET_MIN_CHANNELS:
        out = _im2col(x, kh, kw) @ kernel.reshape(kh * kw * cin, cout) + bias
    else:
        xp = _pad_same(x, kh, kw)
        out = np.empty((b * h * w, cout), dtype=x.dtype)
        out[:] = bias
        for dy in range(kh):
            for dx in range(kw):
                window = np.ascontiguousarray(xp[:, dy : dy + h, dx : dx + w, :])
                out += window.reshape(-1, cin) @ kernel[dy, dx]
    return out.reshape(b, h, w, cout)


def conv2d_backward(
    grad_out: np.ndarray, x: np.ndarray, kernel: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact adjoints of conv2d_forward: (grad_input, grad_kernel, grad_bias)."""
    _check_conv_shapes(x, kernel)
    kh, kw, cin, cout = kernel.shape
    if grad_out.shape != x.shape[:3] + (cout,):
        raise ValueError(
            f"conv2d_backward grad shape {grad_out.shape} does not match "
            f"expected {x.shape[:3] + (cout,)}"
        )
    b, h, w, _ = x.shape
    gmat = grad_out.reshape(-1, cout)
    grad_bias = gmat.sum(axis=0)
    grad_kernel = np.empty_like(kernel)
    xp = _pad_same(x, kh, kw)
    for dy in range(kh):
        for dx in range(kw):
            window = np.ascontiguousarray(xp[:, dy : dy + h, dx : dx + w, :])
            grad_kernel[dy, dx] = window.reshape(-1, cin).T @ gmat
    # grad wrt input is a same-padded conv of grad_out with the kernel
    # flipped spatially and transposed in its channel axes.
    kt = np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))
    grad_input = conv2d_forward(grad_out, kt, np.zeros(cin, dtype=grad_out.dtype))
    return grad_input, grad_kernel, grad_bias


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling, stride 2. Returns (pooled, argmax indices).

    Requires even spatial extents. Indices select within each 2x2 window
    (0..3, first maximum wins) and are consumed by maxpool2_backward.
    """
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 requires even extents, got {h}x{w}")
    win = (
        x.reshape(b, h // 2, 2, w // 2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, h // 2, w // 2, 4, c)
    )
    idx = win.argmax(axis=3)
    out = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return np.ascontiguousarray(out), idx.astype(np.uint8)


def maxpool2_backward(grad_out: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Route gradients to the argmax position of each 2x2 window."""
    b, h2, w2, c = grad_out.shape
    scat = np.zeros((b, h2, w2, 4, c), dtype=grad_out.dtype)
    np.put_along_axis(scat, idx[:, :, :, None, :].astype(np.intp), grad_out[:, :, :, None, :], axis=3)
    return (
        scat.reshape(b, h2, w2, 2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(b, 2 * h2, 2 * w2, c)
    )


def upsample2_nearest(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x upsampling: each pixel becomes a 2x2 block."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_backward(grad_out: np.ndarray) -> np.ndarray:
    """Adjoint of upsample2_nearest: sum each 2x2 block."""
    b, h2, w2, c = grad_out.shape
    if h2 % 2 or w2 % 2:
        raise ValueError(f"upsample2_backward expects even extents, got {h2}x{w2}")
    return grad_out.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Mask gradients where the activation was clipped.

    ref may be either the pre-activation or the relu output; the masks agree.
    """
    return grad_out * (ref > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid_backward(grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Adjoint of sigmoid given its forward output."""
    return grad_out * out * (1.0 - out)


BCE_CLAMP = 1e-7


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross entropy with predictions clamped away from {0, 1}.

    Accumulates in float64 regardless of input dtype.
    """
    if pred.shape != target.shape:
        raise ValueError(f"bce_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP).astype(np.float64)
    t = target.astype(np.float64)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def bce_loss_backward(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Gradient of bce_loss with respect to pred (clamp treated as pass-through)."""
    if pred.shape != target.shape:
        raise ValueError(f"bce_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return ((p - target) / (p * (1.0 - p) * pred.size)).astype(pred.dtype)


def dice_coefficient(pred: np.ndarray, target: np.ndarray) -> float:
    """Overlap score 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty."""
    if pred.shape != target.shape:
        raise ValueError(f"dice shape mismatch: {pred.shape} vs {target.shape}")
    a = pred.astype(bool)
    b = target.astype(bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def he_init(shape, seed, fan_in: int | None = None) -> np.ndarray:
    """Draw float32 weights from normal(0, sqrt(2/fan_in)); 1-D shapes are biases (zeros).

    fan_in defaults to the product of all extents but the last (Kh*Kw*Cin
    for conv kernels); pass it explicitly when an activation sums several
    kernels and the variance rule should count their joint input. The same
    seed always yields bit-identical tensors.
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ValueError(f"he_init extents must be positive, got {shape}")
    if len(shape) == 1:
        return np.zeros(shape, dtype=np.float32)
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1]))
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)
