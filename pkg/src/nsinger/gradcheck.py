"""Central finite-difference check of autograd gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NonFiniteError

# below this magnitude a gradient is compared absolutely rather than relatively
RELATIVE_FLOOR = 1e-6


@dataclass
class Coordinate:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        denom = max(abs(self.analytic), abs(self.numeric), RELATIVE_FLOOR)
        return abs(self.analytic - self.numeric) / denom


@dataclass
class GradCheckReport:
    tolerance: float
    coordinates: list[Coordinate] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((c.rel_error for c in self.coordinates), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def per_parameter(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for c in self.coordinates:
            out[c.name] = max(out.get(c.name, 0.0), c.rel_error)
        return out


def finite_difference_check(f, params, h: float = 1e-5, tolerance: float = 1e-4,
                            n_samples: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare autograd gradients of the scalar ``f()`` with central differences.

    ``params`` is a mapping (or iterable of pairs) of name to leaf tensor that
    ``f`` reads. When ``n_samples`` is given, that many coordinates are drawn
    uniformly over all parameters; otherwise every coordinate is checked.
    """
    named = list(params.items()) if hasattr(params, "items") else list(params)
    tensors = [p for _, p in named]

    value = f()
    if not torch.isfinite(value).all():
        raise NonFiniteError("objective is not finite", term="objective")
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(tensors, grads)]
    for (name, _), g in zip(named, grads):
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"gradient of {name} is not finite", term=name)

    sizes = np.array([p.numel() for p in tensors])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    if n_samples is None or n_samples >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(np.random.default_rng(seed).choice(total, size=n_samples, replace=False))

    report = GradCheckReport(tolerance)
    with torch.no_grad():
        for j in flat:
            which = int(np.searchsorted(offsets, j, side="right") - 1)
            name, p = named[which]
            local = int(j - offsets[which])
            view = p.view(-1)
            orig = view[local].item()
            view[local] = orig + h
            up = f().item()
            view[local] = orig - h
            down = f().item()
            view[local] = orig
            numeric = (up - down) / (2 * h)
            if not math.isfinite(numeric):
                raise NonFiniteError(f"finite difference of {name} is not finite", term=name)
            idx = tuple(int(i) for i in np.unravel_index(local, tuple(p.shape)))
            report.coordinates.append(
                Coordinate(name, idx, grads[which].reshape(-1)[local].item(), numeric))
    return report
