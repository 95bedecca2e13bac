"""Central finite-difference check of autograd gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import NonFiniteGradient


def relative_error(analytic, numeric):
    """|a - n| / max(1e-8, |a| + |n|), elementwise."""
    if isinstance(analytic, torch.Tensor):
        return (analytic - numeric).abs() / torch.clamp(analytic.abs() + numeric.abs(), min=1e-8)
    analytic, numeric = np.asarray(analytic, np.float64), np.asarray(numeric, np.float64)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


@dataclass
class GradientReport:
    analytic: np.ndarray  # one entry per probed coordinate
    numeric: np.ndarray
    names: list  # (parameter index, flat coordinate)

    @property
    def errors(self) -> np.ndarray:
        return relative_error(self.analytic, self.numeric)

    @property
    def max_relative_error(self) -> float:
        return float(self.errors.max()) if self.errors.size else 0.0


def finite_difference_report(scalar_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor],
                             epsilon: float = 1e-5, max_coords_per_param: int | None = None,
                             generator: torch.Generator | None = None) -> GradientReport:
    """Autograd and central-difference derivatives for every probed coordinate.

    ``scalar_fn`` is re-evaluated after perturbing each coordinate in place;
    parameters should be float64. With ``max_coords_per_param`` only that
    many randomly chosen coordinates of each tensor are probed.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    params = [p for p in params if p.requires_grad]
    loss = scalar_fn()
    if not torch.isfinite(loss):
        raise NonFiniteGradient("scalar function is not finite at the probe point")
    grads = torch.autograd.grad(loss, params, allow_unused=True)

    analytic, numeric, names = [], [], []
    with torch.no_grad():
        for k, (p, g) in enumerate(zip(params, grads)):
            g = torch.zeros_like(p) if g is None else g
            if not bool(torch.isfinite(g).all()):
                raise NonFiniteGradient("analytic gradient has non-finite entries")
            flat = p.view(-1)
            gflat = g.reshape(-1)
            coords = range(flat.numel())
            if max_coords_per_param is not None and flat.numel() > max_coords_per_param:
                coords = torch.randperm(flat.numel(), generator=generator)[:max_coords_per_param].tolist()
            for j in coords:
                orig = flat[j].item()
                flat[j] = orig + epsilon
                up = scalar_fn().item()
                flat[j] = orig - epsilon
                down = scalar_fn().item()
                flat[j] = orig
                fd = (up - down) / (2 * epsilon)
                if not math.isfinite(fd):
                    raise NonFiniteGradient(f"finite difference is not finite at coordinate {j} of parameter {k}")
                analytic.append(gflat[j].item())
                numeric.append(fd)
                names.append((k, j))
    return GradientReport(np.asarray(analytic), np.asarray(numeric), names)


def gradient_check(scalar_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor],
                   epsilon: float = 1e-5, max_coords_per_param: int | None = None,
                   generator: torch.Generator | None = None) -> float:
    """Largest relative error between autograd and central differences."""
    return finite_difference_report(scalar_fn, params, epsilon, max_coords_per_param, generator).max_relative_error
