"""Finite-difference verification harness for taped operations."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import GradientTape, Tensor

# relative agreement required between the two stencil scales
_SMOOTH_RTOL = 1e-5
# shrink factors for the retry ladder; the last rung keeps h large enough
# that cancellation noise stays well below the check tolerance
_LADDER = (1.0, 16.0, 64.0)
_EPS = float(np.finfo(np.float64).eps)


def _numeric_derivative(loss_at: Callable[[float], float], base: float, step: float):
    """Converged central-difference derivative at the given base step.

    Evaluates central differences at ``h`` and ``h/2`` and accepts the
    Richardson combination (cancelling the quadratic truncation term) once
    the two scales agree to within rounding noise. Disagreement means the
    stencil is not yet in the asymptotic regime, from large curvature or
    from a ReLU kink inside the stencil, so the check retries at smaller
    base steps; a point that never converges sits on a kink, where no
    two-sided derivative exists.

    Returns ``(estimate, True)`` or ``(None, False)``.
    """
    for shrink in _LADDER:
        h = step / shrink
        fp1, fm1 = loss_at(base + h), loss_at(base - h)
        fp2, fm2 = loss_at(base + h / 2.0), loss_at(base - h / 2.0)
        d1 = (fp1 - fm1) / (2.0 * h)
        d2 = (fp2 - fm2) / h
        noise = 64.0 * _EPS * max(abs(fp1), abs(fm1), 1.0) / h
        if abs(d1 - d2) <= _SMOOTH_RTOL * max(abs(d1), abs(d2)) + noise:
            return d2 + (d2 - d1) / 3.0, True
    return None, False


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-4,
    atol: float = 1e-9,
) -> float:
    """Compare taped gradients of a scalar loss against central differences.

    ``loss_fn`` must build a scalar Tensor from the given input tensors
    (reading their current ``data``). Returns the maximum over all input
    coordinates of ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``,
    where the numeric derivative is the extrapolated central difference at
    base step ``step``. Absolute disagreements below ``atol`` count as exact
    (they are rounding noise, not gradient error), and coordinates detected
    as sitting on a kink of a piecewise-smooth loss are excluded since no
    two-sided derivative exists there.
    """
    if step <= 0:
        raise ValueError("step must be positive")

    for t in inputs:
        t.zero_grad()
    with GradientTape() as tape:
        loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss in finite_difference_check")
    tape.backward(loss)

    analytic = []
    for i, t in enumerate(inputs):
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite analytic gradient for input #{i}")
        analytic.append(g.copy())
        t.zero_grad()

    worst = 0.0
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        grad_flat = analytic[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]

            def loss_at(value: float) -> float:
                flat[j] = value
                out = float(loss_fn().data)
                flat[j] = orig
                if not np.isfinite(out):
                    raise NumericError(
                        f"non-finite loss while perturbing input #{i} coordinate {j}"
                    )
                return out

            numeric, smooth = _numeric_derivative(loss_at, orig, step)
            if not smooth:
                continue  # kink: the loss has no derivative at this coordinate
            a = grad_flat[j]
            if abs(a - numeric) <= atol:
                continue
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            if err > worst:
                worst = err
    return worst
