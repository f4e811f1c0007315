"""Central finite-difference checks for the autodiff engine.

Run on float64 inputs: the float32 training path is too coarse for a
1e-3 step to resolve relative errors near 1e-3.

ReLU and top-k expert routing make the loss piecewise smooth. A central
difference whose interval straddles a branch change measures the jump, not
the derivative, so each probe records the branch pattern at every stencil
point and shrinks ``h`` tenfold until all of them agree with ``x``.

The estimate is the fourth-order central stencil
``(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h``. Layer norm over a
nearly constant row has large higher derivatives, and the plain two-point
difference at ``h = 1e-3`` is then off by more than 1e-3 relative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


def relative_error(auto, numeric, floor: float = 1e-6):
    denom = np.maximum(np.maximum(np.abs(auto), np.abs(numeric)), floor)
    return np.abs(auto - numeric) / denom


@dataclass
class GradReport:
    errors: dict = field(default_factory=dict)  # parameter -> max relative error
    probes: int = 0
    shrunk: int = 0  # probes that needed a smaller step to stay on one branch

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get) if self.errors else ""


def _evaluate(loss_fn: Callable[[], Tensor]) -> tuple[float, list]:
    with T.no_grad(), T.record_branches() as log:
        value = float(loss_fn().item())
    return value, log


def numeric_grad(loss_fn: Callable[[], Tensor], arr: np.ndarray, index: tuple, h: float = 1e-3,
                 min_h: float = 1e-7) -> tuple[float, float]:
    """Central difference at ``arr[index]``; returns (estimate, step used)."""
    old = arr[index]
    _, base = _evaluate(loss_fn)
    try:
        while True:
            values = {}
            same = True
            for k in (2, 1, -1, -2):
                arr[index] = old + k * h
                values[k], branches = _evaluate(loss_fn)
                same = same and branches == base
            if same or h / 10 < min_h:
                return (8 * (values[1] - values[-1]) - (values[2] - values[-2])) / (12 * h), h
            h /= 10
    finally:
        arr[index] = old


def check_gradients(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-3,
                    floor: float = 1e-6, max_coords: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> GradReport:
    """Compare autodiff gradients with central differences, elementwise.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    With ``max_coords`` only that many randomly chosen entries per tensor are
    probed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in params.values():
        if t.data.dtype != np.float64:
            raise TypeError(f"gradient checks need float64 tensors, got {t.data.dtype}")
        t.grad = None
    T.backward(loss_fn())
    auto = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
            for name, t in params.items()}

    report = GradReport()
    for name, t in params.items():
        coords = list(np.ndindex(t.data.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in pick]
        worst = 0.0
        for idx in coords:
            num, used = numeric_grad(loss_fn, t.data, idx, h)
            report.probes += 1
            report.shrunk += used < h
            worst = max(worst, float(relative_error(auto[name][idx], num, floor)))
        report.errors[name] = worst
    return report
