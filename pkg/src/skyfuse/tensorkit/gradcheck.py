"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    offending: list = field(default_factory=list)  # (input index, flat index, analytic, numeric)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self) -> str:
        head = f"grad_check {'ok' if self.passed else 'FAILED'}: max rel error {self.max_rel_error:.3e} (tol {self.tol:.1e})"
        if self.passed:
            return head
        rows = [f"  input {i} index {j}: analytic {a:.6e} numeric {n:.6e}" for i, j, a, n in self.offending[:10]]
        return "\n".join([head, *rows])


def grad_check(f: Callable[..., Tensor], inputs, h: float = 1e-4, tol: float = 1e-4,
               atol: float = 1e-8) -> GradCheckReport:
    """Compare ``backward`` gradients of scalar ``f(*inputs)`` to central differences.

    Inputs are promoted to 64-bit replicas first. The relative error of each
    component is ``|a - n| / max(|a|, |n|, atol)``; components above ``tol`` are
    listed in the report.
    """
    single = isinstance(inputs, (Tensor, np.ndarray))
    seq: Sequence = [inputs] if single else list(inputs)
    xs = [Tensor(np.array(getattr(x, "data", x), dtype=np.float64), requires_grad=True, dtype=np.float64)
          for x in seq]

    out = f(*xs)
    out.backward()
    analytic = [x.grad.copy() if x.grad is not None else np.zeros_like(x.data) for x in xs]

    worst = 0.0
    offending = []
    for i, x in enumerate(xs):
        flat = x.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(f(*xs).data)
            flat[j] = orig - h
            fm = float(f(*xs).data)
            flat[j] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic[i].reshape(-1)[j])
            rel = abs(ana - num) / max(abs(ana), abs(num), atol)
            worst = max(worst, rel)
            if rel > tol:
                offending.append((i, j, ana, num))
    return GradCheckReport(worst, tol, offending)
