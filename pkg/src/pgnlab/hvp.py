"""Curvature machinery built from first-order gradients only.

A Hessian/vector product is approximated by differencing two gradients one
small step apart (forward difference); an O(h^2) central-difference oracle
and a brute-force full-Hessian path exist for verification and for the
complexity ablation.  The interpolated two-gradient update used by the PGN
attack and the penalized-objective gradient used by the regularized
baselines live here too.

Anything accepting a ``model`` only needs the gradient-source protocol:
``loss_and_input_grads(xs, ys) -> (losses, grads)`` plus a ``dtype``
attribute, so analytic test objectives plug in alongside real classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import UsageError

ORACLE_STEP = 1e-4  # central-difference step for 64-bit verification oracles
HESSIAN_DIM_CAP = 1024


class EvalCounter:
    """Counts logical gradient evaluations (one per example row)."""

    def __init__(self):
        self.count = 0

    def add(self, n=1):
        self.count += n

    def __repr__(self):
        return f"EvalCounter({self.count})"


@dataclass(frozen=True)
class FdConfig:
    """Finite-difference step and direction-normalization mode.

    ``norm`` selects how the displacement direction is normalized: "l2" for
    the verification-path identities, "l1" for the attack path.
    """

    fd_step: float
    norm: str = "l2"

    def __post_init__(self):
        if self.fd_step <= 0:
            raise UsageError(f"fd_step must be > 0, got {self.fd_step}")
        if self.norm not in ("l1", "l2"):
            raise UsageError(f"norm must be 'l1' or 'l2', got {self.norm!r}")


def direction_norm(g, mode):
    a = np.abs(g)
    return float(a.sum()) if mode == "l1" else float(np.sqrt((a * a).sum()))


def _grad(model, x, y, counter):
    _, grads = model.loss_and_input_grads(np.asarray(x)[None], [y])
    if counter is not None:
        counter.add(1)
    return grads[0]


def _grad_batch(model, xs, y, counter):
    _, grads = model.loss_and_input_grads(xs, [y] * len(xs))
    if counter is not None:
        counter.add(len(xs))
    return grads


def _require_float64(model, x, who):
    if np.dtype(model.dtype) != np.float64 or np.asarray(x).dtype != np.float64:
        raise UsageError(f"{who} requires the 64-bit precision mode")


def fdm_hvp(model, x, y, v, cfg, counter=None):
    """Forward-difference Hessian/vector product: (grad(x + a*v) - grad(x)) / a.

    Uses exactly two gradient evaluations.  ``v`` is taken as given (callers
    normalize it themselves).
    """
    x = np.asarray(x)
    v = np.asarray(v)
    if v.shape != x.shape:
        raise UsageError(f"direction shape {v.shape} does not match input {x.shape}")
    if not np.all(np.isfinite(v)):
        raise UsageError("direction vector must be finite")
    g0 = _grad(model, x, y, counter)
    g1 = _grad(model, x + cfg.fd_step * v, y, counter)
    return (g1 - g0) / np.asarray(cfg.fd_step, dtype=g0.dtype)


def exact_hvp_oracle(model, x, y, v, h=ORACLE_STEP, counter=None):
    """Central-difference HVP, (grad(x + h*v) - grad(x - h*v)) / 2h.

    O(h^2)-accurate reference; requires the 64-bit precision mode.
    """
    x = np.asarray(x)
    v = np.asarray(v)
    if h <= 0:
        raise UsageError(f"h must be > 0, got {h}")
    if v.shape != x.shape:
        raise UsageError(f"direction shape {v.shape} does not match input {x.shape}")
    _require_float64(model, x, "exact_hvp_oracle")
    gp = _grad(model, x + h * v, y, counter)
    gm = _grad(model, x - h * v, y, counter)
    return (gp - gm) / (2.0 * h)


def full_hessian(model, x, y, h=ORACLE_STEP, cap=HESSIAN_DIM_CAP, counter=None):
    """Brute-force Hessian via central differences of gradients.

    Column j is (grad(x + h*e_j) - grad(x - h*e_j)) / 2h; costs exactly 2n
    gradient evaluations for an n-dimensional input.  Evaluations are batched
    internally, which does not change the count.  Only for the timing
    ablation and small-dimensional oracles.
    """
    x = np.asarray(x)
    n = x.size
    if n > cap:
        raise UsageError(f"input dimension {n} exceeds the full-Hessian cap {cap}")
    if h <= 0:
        raise UsageError(f"h must be > 0, got {h}")
    _require_float64(model, x, "full_hessian")
    flat = x.reshape(-1)
    eye = np.eye(n, dtype=x.dtype) * h
    pts = np.concatenate([flat[None] + eye, flat[None] - eye], axis=0)
    grads = _grad_batch(model, pts.reshape((2 * n,) + x.shape), y, counter)
    grads = grads.reshape(2 * n, n)
    return (grads[:n] - grads[n:]).T / (2.0 * h)


class PgnGradient(NamedTuple):
    grad: np.ndarray
    degenerate: bool


def pgn_gradient(model, x_prime, y, delta, cfg, counter=None):
    """Two-gradient interpolation: (1-d)*grad(x') + d*grad(x*).

    The predicted point is x* = x' - fd_step * g'/||g'|| with the norm chosen
    by ``cfg.norm``.  A zero gradient at x' cannot be normalized; the sampled
    gradient is returned unchanged with ``degenerate=True`` so batch attacks
    can proceed.
    """
    if not 0.0 <= delta <= 1.0:
        raise UsageError(f"delta must be in [0,1], got {delta}")
    x_prime = np.asarray(x_prime)
    g_prime = _grad(model, x_prime, y, counter)
    norm = direction_norm(g_prime, cfg.norm)
    if norm == 0.0:
        return PgnGradient(g_prime, True)
    x_star = x_prime - np.asarray(cfg.fd_step / norm, g_prime.dtype) * g_prime
    g_star = _grad(model, x_star, y, counter)
    one = np.asarray(1.0, g_prime.dtype)
    d = np.asarray(delta, g_prime.dtype)
    return PgnGradient((one - d) * g_prime + d * g_star, False)


class RegGradient(NamedTuple):
    grad: np.ndarray
    degenerate: bool


def reg_objective_gradient(model, x_adv, x_prime, y, lam, cfg, counter=None):
    """Gradient of the norm-penalized objective at the current iterate.

    Returns grad(x_adv) - lam * HVP(x', g'/||g'||_2) with the HVP taken by
    forward difference (the sampled gradient g' is reused, so the whole
    update costs three gradient evaluations).
    """
    if lam < 0:
        raise UsageError(f"lam must be >= 0, got {lam}")
    x_adv = np.asarray(x_adv)
    x_prime = np.asarray(x_prime)
    g_adv = _grad(model, x_adv, y, counter)
    g_prime = _grad(model, x_prime, y, counter)
    n2 = direction_norm(g_prime, "l2")
    if n2 == 0.0:
        return RegGradient(g_adv, True)
    v = g_prime / np.asarray(n2, g_prime.dtype)
    g_shift = _grad(model, x_prime + np.asarray(cfg.fd_step, v.dtype) * v, y, counter)
    hv = (g_shift - g_prime) / np.asarray(cfg.fd_step, g_prime.dtype)
    return RegGradient(g_adv - np.asarray(lam, g_adv.dtype) * hv, False)
