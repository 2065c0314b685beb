"""Flatness diagnostics: neighborhood max-gradient estimates and 2D loss slices.

The flatness of a point is measured by the largest gradient L2 norm seen over
uniform samples from the L-inf ball around it (a Monte-Carlo stand-in for the
exact neighborhood maximum, which is impractical to compute).  Loss surfaces
are sliced along two random unit directions on a uniform grid whose center
cell is the unperturbed point.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import engine
from .errors import UsageError


@dataclass(frozen=True)
class FlatnessEstimate:
    """Monte-Carlo estimate of the max gradient norm in a zeta-ball."""

    value: float
    zeta: float
    samples: int


def _grad_norms(model, xs, ys):
    _, grads = model.loss_and_input_grads(xs, ys)
    flat = grads.reshape(len(grads), -1).astype(np.float64)
    return np.sqrt((flat * flat).sum(axis=1))


def max_grad_norm_in_ball(model, x, y, zeta, samples, rng):
    """Max gradient L2 norm over ``samples`` uniform L-inf ball draws."""
    if zeta < 0:
        raise UsageError(f"zeta must be >= 0, got {zeta}")
    if samples < 1:
        raise UsageError(f"samples must be >= 1, got {samples}")
    x = np.asarray(x)
    offs = rng.uniform(-zeta, zeta, (samples,) + x.shape).astype(x.dtype)
    norms = _grad_norms(model, x[None] + offs, [y] * samples)
    return FlatnessEstimate(float(norms.max()), float(zeta), int(samples))


def max_grad_norm_profile(model, x, y, zetas, samples, rng):
    """Estimates over an ascending radius list using nested sample sets.

    Each radius adds ``samples`` fresh draws from its own ball and keeps every
    earlier draw (inner balls are subsets), so the returned values are
    non-decreasing by construction.
    """
    if list(zetas) != sorted(zetas):
        raise UsageError("zetas must be ascending")
    x = np.asarray(x)
    best = -np.inf
    out = []
    total = 0
    for zeta in zetas:
        if zeta < 0:
            raise UsageError(f"zeta must be >= 0, got {zeta}")
        offs = rng.uniform(-zeta, zeta, (samples,) + x.shape).astype(x.dtype)
        norms = _grad_norms(model, x[None] + offs, [y] * samples)
        total += samples
        best = max(best, float(norms.max()))
        out.append(FlatnessEstimate(best, float(zeta), total))
    return out


@dataclass(frozen=True)
class SurfaceGrid:
    """Loss values on a (G x G) grid spanned by two random unit directions."""

    r1: np.ndarray
    r2: np.ndarray
    offsets: np.ndarray       # the shared k-axis, length G, centered on 0.0
    values: np.ndarray        # (G, G); values[i, j] = loss at k1=offsets[i], k2=offsets[j]
    center_loss: float
    seed: int
    scale: float

    @property
    def resolution(self):
        return len(self.offsets)


def loss_surface(model, x, y, seed, scale=0.1, resolution=41):
    """Evaluate the loss on a grid x + k1*r1 + k2*r2 with |k| <= ``scale``.

    The directions are seeded standard Gaussians normalized to unit L2.
    ``resolution`` must be odd so the center of the grid is exactly x.
    """
    if resolution % 2 == 0:
        raise UsageError(f"resolution must be odd, got {resolution}")
    if scale <= 0:
        raise UsageError(f"scale must be > 0, got {scale}")
    x = np.asarray(x)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 4040]))
    dirs = []
    for _ in range(2):
        r = rng.standard_normal(x.shape)
        r = (r / np.sqrt((r * r).sum())).astype(x.dtype)
        dirs.append(r)
    r1, r2 = dirs
    half = resolution // 2
    offsets = (np.arange(resolution) - half) * (scale / half)
    values = np.empty((resolution, resolution), dtype=np.float64)
    for i, k1 in enumerate(offsets):
        for j, k2 in enumerate(offsets):
            point = x + x.dtype.type(k1) * r1 + x.dtype.type(k2) * r2
            loss, _ = engine.eval_loss(model, point, y)
            values[i, j] = loss
    return SurfaceGrid(r1, r2, offsets, values, float(values[half, half]),
                       int(seed), float(scale))


def surface_to_csv(grid):
    """Serialize a SurfaceGrid as ``k1,k2,loss`` rows (row-major, 9 sig digits)."""
    buf = io.StringIO()
    buf.write("k1,k2,loss\n")
    for i, k1 in enumerate(grid.offsets):
        for j, k2 in enumerate(grid.offsets):
            buf.write(f"{k1:.9g},{k2:.9g},{grid.values[i, j]:.9g}\n")
    return buf.getvalue()


def write_surface_csv(grid, path):
    with open(path, "w") as f:
        f.write(surface_to_csv(grid))
