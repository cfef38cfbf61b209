"""Central finite-difference gradient checking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dualview.errors import NumericalError
from dualview.nn.layers import Parameter


def numeric_gradient(f: Callable[[], float], value: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of ``f`` with respect to ``value`` (perturbed in place)."""
    grad = np.zeros(value.shape, dtype=np.float64)
    flat = value.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericalError(f"non-finite loss at flat index {i}: f+={fp}, f-={fm}")
        grad.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is ~0 from dividing noise by noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-3
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def fd_gradient_check(loss_fn: Callable[[], float], params: dict[str, Parameter],
                      h: float = 1e-4, tol: float = 1e-3,
                      floor: float = 1e-6) -> GradCheckReport:
    """Compare ``params[*].grad`` against central differences of ``loss_fn``.

    ``loss_fn`` must read the current parameter values and be deterministic.
    The caller populates the analytic gradients beforehand. Use float64
    parameters; single precision cannot resolve ``h=1e-4``.
    """
    base = loss_fn()
    if not math.isfinite(base):
        raise NumericalError(f"loss is not finite before the check: {base}")
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        num = numeric_gradient(loss_fn, p.value, h)
        err = float(relative_error(p.grad, num, floor).max()) if p.size else 0.0
        report.max_rel_error[name] = err
        if not err <= tol:
            report.failures.append(name)
    return report
