"""Central finite-difference verification of recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import StateError
from .tensor import no_grad


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict = field(default_factory=dict)

    @property
    def failures(self):
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    @property
    def ok(self):
        return not self.failures

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)


def relative_error(analytic, numeric, floor=1e-12):
    """max|a - n| divided by the largest gradient magnitude of the tensor.

    Normalizing per tensor rather than per element keeps near-zero entries from
    turning O(step^2) truncation noise into large ratios.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def finite_diff_gradcheck(forward, named_params, step=1e-3, tolerance=1e-4, analytic=None):
    """Compare backward() gradients against central differences.

    forward: zero-arg closure returning a scalar Tensor built from the
    parameters' current data.  analytic: optional dict name -> array overriding
    the recorded gradients (used for negative controls).
    """
    named_params = dict(named_params)
    for name, p in named_params.items():
        if p.data.dtype != np.float64:
            raise StateError(f"gradcheck requires 64-bit parameters; {name} is {p.data.dtype}")
    if analytic is None:
        for p in named_params.values():
            p.zero_grad()
        loss = forward()
        loss.backward()
        analytic = {k: p.grad.copy() for k, p in named_params.items()}

    report = GradCheckReport(tolerance=tolerance)
    with no_grad():
        for name, p in named_params.items():
            flat = p.data.reshape(-1)
            numeric = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float(forward().data)
                flat[i] = orig - step
                down = float(forward().data)
                flat[i] = orig
                numeric[i] = (up - down) / (2 * step)
            report.errors[name] = relative_error(analytic[name].reshape(-1), numeric)
    return report
