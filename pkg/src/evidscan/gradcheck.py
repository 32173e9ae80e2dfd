"""Finite-difference verification of reverse-mode gradients.

``finite_diff_check`` compares the analytic gradient of a scalar-valued
tensor function against central differences (f(p+h) - f(p-h)) / 2h. Large
parameter tensors are checked on a seeded random subset of coordinates to
keep runtime bounded; the reported figure is the max relative error over all
checked coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .rng import Rng
from .tensor import Tensor, backward, tape

__all__ = ["finite_diff_check", "GradCheckReport", "DeterminismError"]


class DeterminismError(RuntimeError):
    """Two identical forward passes produced different values."""


@dataclass
class GradCheckReport:
    tol: float
    h: float
    per_param: dict[str, float] = field(default_factory=dict)
    passed: bool = True

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    def summary_lines(self) -> list[str]:
        lines = []
        for name, err in sorted(self.per_param.items()):
            status = "ok" if err <= self.tol else "FAIL"
            lines.append(f"{status:4s} {name}: max rel err {err:.3e}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'}: max {self.max_rel_error:.3e} (tol {self.tol:.1e})")
        return lines


def _rel_error(a: float, n: float) -> float:
    scale = max(abs(a), abs(n))
    if scale < 1e-6:
        return 0.0
    diff = abs(a - n)
    if diff < 1e-7:
        return 0.0
    return diff / max(scale, 1e-2)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-4,
    tol: float = 1e-4,
    max_coords_per_param: int = 24,
    seed: int = 0,
) -> GradCheckReport:
    """Check d f / d params against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    Tensor; determinism is verified by evaluating it twice.
    """
    check_rng = Rng(seed, stream_id=0xFD)

    def eval_value() -> float:
        out = f()
        if out.size != 1:
            raise ValueError(f"gradcheck function must return a scalar, got shape {out.shape}")
        return float(out.data.reshape(())[()])

    v1 = eval_value()
    v2 = eval_value()
    if v1 != v2:
        raise DeterminismError(f"forward passes differ: {v1!r} vs {v2!r}")

    for p in params.values():
        p.grad = None
    with tape() as t:
        loss = f()
        backward(loss, t)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    report = GradCheckReport(tol=tol, h=h)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = np.arange(n)
        else:
            coords = check_rng.generator.choice(n, size=max_coords_per_param, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = eval_value()
            flat[c] = orig - h
            fm = eval_value()
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * h)
            worst = max(worst, _rel_error(float(analytic[name].reshape(-1)[c]), numeric))
        report.per_param[name] = worst
        if worst > tol:
            report.passed = False
    return report
