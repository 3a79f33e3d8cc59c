"""Dense float64 matrix primitives and a finite-difference gradient checker.

Everything downstream works in row-major float64: frames are rows, channels
are columns. Every hand-derived backward pass in the package is validated
against :func:`grad_check`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

__all__ = ["Matrix", "GradCheckReport", "as_matrix", "matmul", "softmax_xent", "grad_check"]

# A "Matrix" throughout the package is a 2-D C-contiguous float64 ndarray
# with finite entries; `as_matrix` is the validating constructor.
Matrix = np.ndarray

REL_ERROR_FLOOR = 1e-12  # denominator floor, avoids 0/0 at exactly-zero gradients


def as_matrix(a, name: str = "matrix") -> Matrix:
    """Coerce `a` to a 2-D C-contiguous float64 array, rejecting bad input."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite entries")
    return out


def matmul(a, b) -> Matrix:
    """Matrix product with ascending inner-index accumulation.

    Partial products are added in increasing k order, so every output entry
    sees the exact rounding sequence of a naive triple loop and the result is
    bit-identical to that oracle. Hot paths elsewhere use ``@`` directly;
    this is the reference primitive.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def softmax_xent(logits, target: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax(`logits`) against a hard `target` index.

    Returns ``(loss, grad)`` with ``loss = -log softmax(logits)[target]`` and
    ``grad = softmax(logits) - one_hot(target)``. Max-subtraction keeps
    saturated logits from overflowing.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    if z.size < 2:
        raise ValueError("softmax_xent needs at least two logits")
    if not np.isfinite(z).all():
        raise ValueError("logits contain non-finite entries")
    if not 0 <= int(target) < z.size:
        raise ValueError(f"target {target} out of range for {z.size} classes")
    shifted = z - z.max()
    logsumexp = float(np.log(np.exp(shifted).sum()))
    loss = logsumexp - float(shifted[target])
    grad = np.exp(shifted - logsumexp)
    grad[target] -= 1.0
    return loss, grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    step: float


def grad_check(
    f: Callable[[np.ndarray], float],
    analytic_grad,
    point,
    step: float = 1e-5,
    indices: Optional[Iterable[int]] = None,
) -> GradCheckReport:
    """Compare `analytic_grad` against central differences of `f` at `point`.

    Per coordinate i the numeric gradient is ``(f(x + h e_i) - f(x - h e_i)) / 2h``
    and the relative error is ``|a - n| / max(|a|, |n|, 1e-12)``. `indices`
    restricts the sweep to a coordinate subset, which keeps the check cheap on
    large parameter vectors. Never raises; the report carries the verdict.
    """
    x = np.array(point, dtype=np.float64).reshape(-1)
    g = np.asarray(analytic_grad, dtype=np.float64).reshape(-1)
    if g.shape != x.shape:
        raise ValueError("analytic gradient and point shapes disagree")
    if indices is None:
        indices = range(x.size)
    worst = 0.0
    worst_index = -1
    for i in indices:
        orig = x[i]
        x[i] = orig + step
        f_plus = float(f(x))
        x[i] = orig - step
        f_minus = float(f(x))
        x[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        rel = abs(g[i] - numeric) / max(abs(g[i]), abs(numeric), REL_ERROR_FLOOR)
        if rel > worst:
            worst = rel
            worst_index = int(i)
    return GradCheckReport(max_rel_error=float(worst), worst_index=worst_index, step=float(step))
