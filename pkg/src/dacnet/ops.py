"""Convolution variants and auxiliary layers, with exact adjoints.

The convolutions are direct implementations: each kernel tap contributes one
fused multiply-accumulate per output position, with taps spaced ``dilation``
samples apart in the padded input and output positions spaced ``stride``
apart. No im2col buffers or transform tricks, so the executed
multiply-accumulate count per layer equals the analytic cost model exactly;
an optional instrumentation context (:func:`count_macs`) tallies that count
from the runtime operand shapes as the kernels execute.

Raw kernels (``*_forward`` / ``*_backward``) operate on numpy arrays. The
lowercase wrappers (``conv2d``, ``relu``, ...) operate on
:class:`~dacnet.tensor.Tensor` values and record their adjoints on the
innermost active :class:`~dacnet.tensor.GradientTape`.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import DTYPE, GradientTape, Tensor

MODES = ("standard", "depthwise", "pointwise")


@dataclass(frozen=True)
class ConvSpec:
    """Full parameterization of one 2-D convolution layer.

    ``padding`` is zero padding, symmetric per spatial axis: either one
    integer for both axes or a ``(pad_h, pad_w)`` pair. ``dilation = 1``
    reproduces ordinary convolution.
    """

    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int | tuple[int, int] = 0
    dilation: int = 1
    mode: str = "standard"
    has_bias: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown convolution mode {self.mode!r}")
        if self.kernel_size < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("kernel_size and channel counts must be positive")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        ph, pw = self.pad
        if ph < 0 or pw < 0:
            raise ConfigError(f"padding must be non-negative, got {self.padding}")
        if self.mode == "depthwise" and self.out_channels != self.in_channels:
            raise ConfigError(
                "depthwise convolution needs out_channels == in_channels "
                f"(one filter per input channel), got {self.in_channels}->{self.out_channels}"
            )
        if self.mode == "pointwise" and (self.kernel_size != 1 or self.dilation != 1):
            raise ConfigError("pointwise convolution requires kernel_size = 1 and dilation = 1")

    @property
    def pad(self) -> tuple[int, int]:
        if isinstance(self.padding, tuple):
            return self.padding
        return (self.padding, self.padding)

    @property
    def effective_extent(self) -> int:
        """Span of the dilated kernel in the input: d*(K-1) + 1."""
        return self.dilation * (self.kernel_size - 1) + 1

    def kernel_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        if self.mode == "depthwise":
            return (self.in_channels, 1, k, k)
        return (self.out_channels, self.in_channels, k, k)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        """Output-shape law; rejects inputs the padded kernel does not fit."""
        ph, pw = self.pad
        ext = self.effective_extent
        ho = (h + 2 * ph - ext) // self.stride + 1
        wo = (w + 2 * pw - ext) // self.stride + 1
        if h + 2 * ph < ext:
            raise ShapeError(
                f"effective kernel extent {ext} exceeds padded input height {h + 2 * ph}"
            )
        if w + 2 * pw < ext:
            raise ShapeError(
                f"effective kernel extent {ext} exceeds padded input width {w + 2 * pw}"
            )
        return ho, wo


# ---------------------------------------------------------------------------
# Multiply-accumulate instrumentation
# ---------------------------------------------------------------------------


class MacCounter:
    """Tally of multiply-accumulate operations performed by the kernels."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += n


_MAC_STACK: list[MacCounter] = []


@contextmanager
def count_macs():
    """Count forward-pass MACs executed inside the ``with`` block.

    The count is derived from the runtime operand shapes of each executed
    kernel call (one MAC per scalar multiply in the accumulation), not from
    any analytic cost formula.
    """
    counter = MacCounter()
    _MAC_STACK.append(counter)
    try:
        yield counter
    finally:
        _MAC_STACK.pop()


def _tally(n: int) -> None:
    if _MAC_STACK:
        _MAC_STACK[-1].add(n)


# ---------------------------------------------------------------------------
# Convolution kernels
# ---------------------------------------------------------------------------


def _check_conv_input(x: np.ndarray, kernel: np.ndarray, spec: ConvSpec) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D input (B, C, H, W), got {x.ndim}-D")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input channel dimension is {x.shape[1]}, spec expects {spec.in_channels}"
        )
    expected = spec.kernel_shape()
    if kernel.shape != expected:
        raise ShapeError(
            f"kernel shape {kernel.shape} does not match {spec.mode} spec {expected}"
        )


def _pad_input(x: np.ndarray, pad: tuple[int, int]) -> np.ndarray:
    ph, pw = pad
    if ph == 0 and pw == 0:
        return x
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    return xp


def _tap_window(xp: np.ndarray, kh: int, kw: int, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    d, s = spec.dilation, spec.stride
    h0, w0 = kh * d, kw * d
    return xp[:, :, h0:h0 + (ho - 1) * s + 1:s, w0:w0 + (wo - 1) * s + 1:s]


def _conv2d_forward_padded(
    xp: np.ndarray,
    kernel: np.ndarray,
    bias: Optional[np.ndarray],
    spec: ConvSpec,
    ho: int,
    wo: int,
) -> np.ndarray:
    b = xp.shape[0]
    k = spec.kernel_size

    if spec.mode == "depthwise":
        out = None
        scratch = None
        for kh in range(k):
            for kw in range(k):
                win = _tap_window(xp, kh, kw, spec, ho, wo)
                tap = kernel[:, 0, kh, kw].reshape(1, -1, 1, 1)
                if out is None:
                    out = tap * win
                    scratch = np.empty_like(out)
                else:
                    np.multiply(tap, win, out=scratch)
                    out += scratch
                _tally(win.size)
    else:
        out_flat = None
        scratch = None
        for kh in range(k):
            for kw in range(k):
                win = _tap_window(xp, kh, kw, spec, ho, wo)
                win_flat = win.reshape(b, spec.in_channels, ho * wo)
                if out_flat is None:
                    out_flat = np.matmul(kernel[:, :, kh, kw], win_flat)
                    if k > 1:
                        scratch = np.empty_like(out_flat)
                else:
                    np.matmul(kernel[:, :, kh, kw], win_flat, out=scratch)
                    out_flat += scratch
                _tally(spec.out_channels * win.size)
        out = out_flat.reshape(b, spec.out_channels, ho, wo)

    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def conv2d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: Optional[np.ndarray],
    spec: ConvSpec,
) -> np.ndarray:
    """Direct dilated/strided convolution in any of the three modes."""
    _check_conv_input(x, kernel, spec)
    _, _, h, w = x.shape
    ho, wo = spec.output_hw(h, w)
    xp = _pad_input(x, spec.pad)
    return _conv2d_forward_padded(xp, kernel, bias, spec, ho, wo)


def conv2d_backward(
    output_grad: np.ndarray,
    x: np.ndarray,
    kernel: np.ndarray,
    spec: ConvSpec,
    need_input_grad: bool = True,
    need_bias_grad: bool = False,
    padded_input: Optional[np.ndarray] = None,
) -> tuple[Optional[np.ndarray], np.ndarray, Optional[np.ndarray]]:
    """Exact adjoint of :func:`conv2d_forward`.

    ``padded_input`` may pass the padded input saved from the forward pass to
    avoid re-padding.
    """
    _check_conv_input(x, kernel, spec)
    b, _, h, w = x.shape
    ho, wo = spec.output_hw(h, w)
    if output_grad.shape != (b, spec.out_channels, ho, wo):
        raise ShapeError(
            f"output_grad shape {output_grad.shape} does not match forward output "
            f"{(b, spec.out_channels, ho, wo)}"
        )
    xp = padded_input if padded_input is not None else _pad_input(x, spec.pad)
    k = spec.kernel_size
    ph, pw = spec.pad

    kernel_grad = np.zeros_like(kernel)
    input_grad_p = np.zeros_like(xp) if need_input_grad else None
    gout_flat = output_grad.reshape(b, spec.out_channels, ho * wo)
    patch = None  # scratch reused across taps

    for kh in range(k):
        for kw in range(k):
            win = _tap_window(xp, kh, kw, spec, ho, wo)
            if spec.mode == "depthwise":
                kernel_grad[:, 0, kh, kw] = np.einsum("bchw,bchw->c", output_grad, win)
                if need_input_grad:
                    if patch is None:
                        patch = np.empty_like(output_grad)
                    np.multiply(kernel[:, 0, kh, kw].reshape(1, -1, 1, 1),
                                output_grad, out=patch)
                    _tap_window(input_grad_p, kh, kw, spec, ho, wo)[...] += patch
            else:
                win_flat = win.reshape(b, spec.in_channels, ho * wo)
                kernel_grad[:, :, kh, kw] = np.einsum("bnp,bmp->nm", gout_flat, win_flat)
                if need_input_grad:
                    if patch is None:
                        patch = np.empty((b, spec.in_channels, ho * wo), dtype=DTYPE)
                    np.matmul(kernel[:, :, kh, kw].T, gout_flat, out=patch)
                    _tap_window(input_grad_p, kh, kw, spec, ho, wo)[...] += patch.reshape(
                        b, spec.in_channels, ho, wo
                    )

    input_grad = None
    if need_input_grad:
        input_grad = input_grad_p[:, :, ph:ph + h, pw:pw + w]
        if ph or pw:
            input_grad = np.ascontiguousarray(input_grad)
    bias_grad = output_grad.sum(axis=(0, 2, 3)) if need_bias_grad else None
    return input_grad, kernel_grad, bias_grad


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
):
    """Per-channel normalization over batch and spatial axes.

    Training mode normalizes with the biased batch statistics and updates the
    running statistics in place with the given momentum; eval mode uses the
    running statistics. Returns ``(out, cache)`` where ``cache`` feeds
    :func:`batchnorm_backward`.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm expects a 4-D input, got {x.ndim}-D")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count == 0:
        raise ShapeError("batchnorm requires a non-empty batch x spatial extent")

    if training:
        mean = x.mean(axis=(0, 2, 3))
        xhat = x - mean.reshape(1, c, 1, 1)
        var = np.einsum("bchw,bchw->c", xhat, xhat) / count
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
        xhat = x - mean.reshape(1, c, 1, 1)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat *= inv_std.reshape(1, c, 1, 1)
    out = gamma.reshape(1, c, 1, 1) * xhat
    out += beta.reshape(1, c, 1, 1)
    cache = (xhat, inv_std, gamma, count, training)
    return out, cache


def batchnorm_backward(output_grad: np.ndarray, cache):
    xhat, inv_std, gamma, count, training = cache
    c = xhat.shape[1]
    dgamma = np.einsum("bchw,bchw->c", output_grad, xhat)
    dbeta = output_grad.sum(axis=(0, 2, 3))
    dx = output_grad * gamma.reshape(1, c, 1, 1)  # dxhat, reused in place
    if training:
        # Batch statistics depend on x, so the adjoint couples all positions
        # in a channel: dx = inv/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)).
        dx -= (gamma * dbeta / count).reshape(1, c, 1, 1)
        dx -= xhat * (gamma * dgamma / count).reshape(1, c, 1, 1)
    dx *= inv_std.reshape(1, c, 1, 1)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Pointwise layers, pooling, linear, loss
# ---------------------------------------------------------------------------


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def global_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects a 4-D input, got {x.ndim}-D")
    return x.mean(axis=(2, 3))


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray]) -> np.ndarray:
    if x.ndim != 2:
        raise ShapeError(f"linear expects a 2-D input, got {x.ndim}-D")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear input features {x.shape[1]} do not match weight rows {weight.shape[0]}"
        )
    out = x @ weight
    _tally(x.shape[0] * weight.shape[0] * weight.shape[1])
    if bias is not None:
        out = out + bias
    return out


def softmax_cross_entropy_forward(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy with max-subtraction stabilization.

    Returns ``(loss, probs)``; the gradient of ``loss`` with respect to the
    logits is ``(probs - onehot) / batch``.
    """
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects 2-D logits, got {logits.ndim}-D")
    b, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        bad = int(labels[(labels < 0) | (labels >= c)][0])
        raise ConfigError(f"label {bad} outside [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(b), labels].mean()
    return loss, np.exp(log_probs)


# ---------------------------------------------------------------------------
# Taped operations on Tensors
# ---------------------------------------------------------------------------


def _maybe_record(out: Tensor, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = GradientTape.active()
    if tape is not None and any(t.needs_grad() for t in inputs):
        tape.record(out, backward)
    return out


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor], spec: ConvSpec) -> Tensor:
    _check_conv_input(x.data, kernel.data, spec)
    _, _, h, w = x.data.shape
    ho, wo = spec.output_hw(h, w)
    xp = _pad_input(x.data, spec.pad)
    out = Tensor(_conv2d_forward_padded(
        xp, kernel.data, bias.data if bias is not None else None, spec, ho, wo
    ))
    need_x = x.needs_grad()
    need_b = bias is not None and bias.needs_grad()

    def backward(gout: np.ndarray) -> None:
        gx, gk, gb = conv2d_backward(
            gout, x.data, kernel.data, spec,
            need_input_grad=need_x, need_bias_grad=need_b, padded_input=xp,
        )
        if need_x:
            x.accumulate_grad(gx, own=True)
        if kernel.needs_grad():
            kernel.accumulate_grad(gk, own=True)
        if need_b:
            bias.accumulate_grad(gb, own=True)

    inputs = [x, kernel] if bias is None else [x, kernel, bias]
    return _maybe_record(out, inputs, backward)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    out_data, cache = batchnorm_forward(
        x.data, gamma.data, beta.data, running_mean, running_var, training, eps, momentum
    )
    out = Tensor(out_data)

    def backward(gout: np.ndarray) -> None:
        dx, dgamma, dbeta = batchnorm_backward(gout, cache)
        if x.needs_grad():
            x.accumulate_grad(dx, own=True)
        if gamma.needs_grad():
            gamma.accumulate_grad(dgamma, own=True)
        if beta.needs_grad():
            beta.accumulate_grad(dbeta, own=True)

    return _maybe_record(out, [x, gamma, beta], backward)


def relu(x: Tensor) -> Tensor:
    out = Tensor(relu_forward(x.data))
    mask = x.data > 0

    def backward(gout: np.ndarray) -> None:
        x.accumulate_grad(gout * mask, own=True)

    return _maybe_record(out, [x], backward)


def global_avg_pool(x: Tensor) -> Tensor:
    out = Tensor(global_avg_pool_forward(x.data))
    _, _, h, w = x.data.shape

    def backward(gout: np.ndarray) -> None:
        g = np.empty_like(x.data)
        g[...] = gout[:, :, None, None] / (h * w)
        x.accumulate_grad(g, own=True)

    return _maybe_record(out, [x], backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor]) -> Tensor:
    out = Tensor(linear_forward(x.data, weight.data, bias.data if bias is not None else None))

    def backward(gout: np.ndarray) -> None:
        if x.needs_grad():
            x.accumulate_grad(gout @ weight.data.T, own=True)
        if weight.needs_grad():
            weight.accumulate_grad(x.data.T @ gout, own=True)
        if bias is not None and bias.needs_grad():
            bias.accumulate_grad(gout.sum(axis=0), own=True)

    inputs = [x, weight] if bias is None else [x, weight, bias]
    return _maybe_record(out, inputs, backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    loss_val, probs = softmax_cross_entropy_forward(logits.data, labels)
    loss = Tensor(loss_val)
    b, c = logits.data.shape

    def backward(gout: np.ndarray) -> None:
        g = probs.copy()
        g[np.arange(b), labels] -= 1.0
        g *= float(gout) / b
        logits.accumulate_grad(g, own=True)

    _maybe_record(loss, [logits], backward)
    return loss, probs


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add requires equal shapes, got {a.shape} and {b.shape}")
    out = Tensor(a.data + b.data)

    def backward(gout: np.ndarray) -> None:
        if a.needs_grad():
            a.accumulate_grad(gout)
        if b.needs_grad():
            b.accumulate_grad(gout)

    return _maybe_record(out, [a, b], backward)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the feature axis."""
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.data.shape[1] for p in parts]

    def backward(gout: np.ndarray) -> None:
        offset = 0
        for p, width in zip(parts, widths):
            if p.needs_grad():
                p.accumulate_grad(np.ascontiguousarray(gout[:, offset:offset + width]), own=True)
            offset += width

    return _maybe_record(out, list(parts), backward)


def mean_scalar(x: Tensor) -> Tensor:
    """Mean of all elements; convenient scalar head for gradient checks."""
    out = Tensor(x.data.mean())

    def backward(gout: np.ndarray) -> None:
        x.accumulate_grad(np.full_like(x.data, float(gout) / x.data.size), own=True)

    return _maybe_record(out, [x], backward)
