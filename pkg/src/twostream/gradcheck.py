"""Finite-difference verification of the analytic gradients.

`finite_diff_grad` sweeps every parameter coordinate with central differences;
`gradient_check` compares that against a backward pass and reports the worst
relative error per parameter, optionally on a deterministic coordinate sample
to keep large sweeps affordable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import UnreliableCheckError
from .params import ParamStore
from .tensor import no_grad

# Relative error floor: treats gradients below this scale as zero-like so
# finite-difference round-off on a dead path cannot fail the check.
_SCALE_FLOOR = 1e-6


def _assert_deterministic(f: Callable[[], float]) -> float:
    first = float(f())
    second = float(f())
    if first != second:
        raise UnreliableCheckError(
            "objective is not deterministic (two evaluations differ); "
            "disable stochastic operations (e.g. run dropout in eval mode) before checking gradients"
        )
    return first


def finite_diff_grad(f: Callable[[], float], store: ParamStore, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of scalar `f` w.r.t. every store entry.

    `f` must be deterministic; this is verified by evaluating it twice up
    front and raising UnreliableCheckError on any discrepancy.
    """
    _assert_deterministic(f)
    grads: dict[str, np.ndarray] = {}
    with no_grad():
        for name, tensor in store.items():
            flat = tensor.data.reshape(-1)
            grad = np.zeros_like(flat)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + h
                up = float(f())
                flat[i] = original - h
                down = float(f())
                flat[i] = original
                grad[i] = (up - down) / (2.0 * h)
            grads[name] = grad.reshape(tensor.data.shape)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger gradient magnitude (floored)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), _SCALE_FLOOR)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


@dataclass
class GradCheckReport:
    per_param: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.per_param, key=self.per_param.get)
        return name, self.per_param[name]

    @property
    def passed(self) -> bool:
        return all(err <= self.tolerance for err in self.per_param.values())

    def grouped(self) -> dict[str, float]:
        """Worst error per top-level prefix (enc, rsf, cpe, fsn, ...)."""
        groups: dict[str, float] = {}
        for name, err in self.per_param.items():
            prefix = name.split(".", 1)[0]
            groups[prefix] = max(groups.get(prefix, 0.0), err)
        return groups

    def lines(self) -> list[str]:
        out = []
        for prefix, err in sorted(self.grouped().items()):
            status = "ok" if err <= self.tolerance else "FAIL"
            out.append(f"{prefix:<12s} max_rel_err={err:.3e}  {status}")
        name, err = self.worst
        out.append(f"worst: {name} ({err:.3e}), tolerance {self.tolerance:.0e}")
        return out


def gradient_check(
    f: Callable[[], "object"],
    store: ParamStore,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward-pass gradients of scalar tensor `f()` against central
    differences.

    With `max_coords_per_param` set, only a deterministic random subset of
    coordinates per parameter is swept (full sweep otherwise).  The analytic
    side always comes from one complete backward pass.
    """
    _assert_deterministic(lambda: float(f()))

    store.zero_grad()
    loss = f()
    loss.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in store.items()}

    coord_rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    with no_grad():
        for name, tensor in store.items():
            flat = tensor.data.reshape(-1)
            n = flat.size
            if max_coords_per_param is not None and n > max_coords_per_param:
                coords = coord_rng.choice(n, size=max_coords_per_param, replace=False)
            else:
                coords = np.arange(n)
            numeric = np.zeros(len(coords))
            for j, i in enumerate(coords):
                original = flat[i]
                flat[i] = original + h
                up = float(f())
                flat[i] = original - h
                down = float(f())
                flat[i] = original
                numeric[j] = (up - down) / (2.0 * h)
            report.per_param[name] = relative_error(analytic[name].reshape(-1)[coords], numeric)
    return report
