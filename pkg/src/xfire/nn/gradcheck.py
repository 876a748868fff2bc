"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    n_checked: int
    worst: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:.0e}, {self.n_checked} entries)"


def rel_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-6, max_entries: int | None = None,
                 rng: np.random.Generator | None = None):
    """Central differences of ``f`` w.r.t. ``x`` (perturbed in place).

    With ``max_entries`` only a random subset of coordinates is probed; the
    probed flat indices are returned alongside.
    """
    flat = x.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = (rng or np.random.default_rng(0)).choice(flat.size, size=max_entries, replace=False)
    out = np.empty(idx.size)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        out[n] = (fp - fm) / (2 * step)
    return out, idx


def gradient_check(
    name: str,
    loss_fn: Callable[[], float],
    analytic: dict[str, np.ndarray],
    tensors: dict[str, np.ndarray],
    tolerance: float,
    step: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Compare ``analytic[k]`` with central differences of ``loss_fn`` over ``tensors[k]``.

    ``loss_fn`` must read the arrays in ``tensors`` (they are perturbed in
    place) and must be evaluated in float64 for the comparison to mean much.
    ``floor`` bounds the denominator so near-zero gradients are judged on
    absolute error instead.
    """
    worst, worst_at, count = 0.0, "", 0
    for key, x in tensors.items():
        if x.dtype != np.float64:
            raise TypeError(f"gradient check needs float64 tensors, {key} is {x.dtype}")
        num, idx = numeric_grad(loss_fn, x, step, max_entries, rng)
        ana = np.asarray(analytic[key]).reshape(-1)[idx]
        err = rel_error(ana, num, floor)
        count += err.size
        if err.size and err.max() > worst:
            worst = float(err.max())
            worst_at = f"{key}[{int(idx[err.argmax()])}]"
    return GradCheckReport(name, worst, tolerance, count, worst_at)
