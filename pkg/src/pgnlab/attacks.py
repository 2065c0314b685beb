"""Gradient-based L-infinity attacks: the sign-step family and PGN.

All methods share one update skeleton: compute a per-iteration gradient
estimate, fold it into an L1-normalized momentum accumulator, take a sign
step, then project onto the intersection of the epsilon-ball around the
original image and the valid pixel range.  The projection band is computed
once per attack with directed rounding so every float32 iterate satisfies
the budget exactly (no half-ulp overshoot at the ball boundary).

Per-iteration gradient estimates:

  * ifgsm      raw gradient, no momentum
  * mifgsm     raw gradient into momentum
  * nifgsm     gradient at the lookahead point x + a*mu*momentum
  * vmifgsm    gradient plus the previous iteration's sampled variance term
  * emifgsm    average gradient over points spread along the previous average
  * pgn        average over sampled neighbors of the two-gradient interpolation
  * reg-*      gradient minus lam * finite-difference HVP at a sampled neighbor

Attacks that sample require an explicit rng; callers derive one stream per
example by seed-splitting so serial and parallel runs agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import engine
from .errors import UsageError
from .hvp import FdConfig

DEFAULT_EPS = 16.0 / 255.0


@dataclass(frozen=True)
class AttackBudget:
    """Perturbation constraint: L-inf radius, iteration count, step, decay."""

    eps: float = DEFAULT_EPS
    steps: int = 10
    step_size: Optional[float] = None  # defaults to eps/steps
    decay: float = 1.0
    clamp: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.eps < 0:
            raise UsageError(f"eps must be >= 0, got {self.eps}")
        if self.steps < 1:
            raise UsageError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.eps / self.steps)
        if self.step_size < 0 or (self.eps > 0 and self.step_size == 0):
            raise UsageError(f"invalid step_size {self.step_size} for eps {self.eps}")
        if self.decay < 0:
            raise UsageError(f"decay must be >= 0, got {self.decay}")
        lo, hi = self.clamp
        if not lo < hi:
            raise UsageError(f"invalid clamp range {self.clamp}")


@dataclass(frozen=True)
class PgnParams:
    """PGN knobs: interpolation weight, sampling-ball factor, sample count."""

    delta: float = 0.5
    zeta_factor: float = 3.0
    samples: int = 20

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise UsageError(f"delta must be in [0,1], got {self.delta}")
        if self.zeta_factor < 0:
            raise UsageError(f"zeta_factor must be >= 0, got {self.zeta_factor}")
        if self.samples < 1:
            raise UsageError(f"samples must be >= 1, got {self.samples}")

    def zeta(self, budget):
        return self.zeta_factor * budget.eps

    def lam(self, budget):
        """Penalty coefficient implied by the interpolation weight: delta * alpha."""
        return self.delta * budget.step_size


@dataclass(frozen=True)
class BaselineParams:
    """Sampling knobs for the variance-tuned and averaged-gradient baselines."""

    vmi_samples: int = 20
    vmi_beta_factor: float = 1.5
    emi_samples: int = 11
    emi_eta: float = 7.0
    emi_sampling: str = "linear"

    def __post_init__(self):
        if self.vmi_samples < 1 or self.emi_samples < 1:
            raise UsageError("sample counts must be >= 1")
        if self.vmi_beta_factor < 0 or self.emi_eta < 0:
            raise UsageError("sampling factors must be >= 0")
        if self.emi_sampling != "linear":
            raise UsageError(f"unsupported emi_sampling {self.emi_sampling!r}")


class IterRecord(NamedTuple):
    loss: float
    gbar_l1: float
    momentum_l1: float
    flagged: bool


@dataclass
class AdvResult:
    """One adversarial example plus its trajectory metadata."""

    method: str
    original: np.ndarray
    adv: np.ndarray
    label: int
    budget: AttackBudget
    iterations: tuple
    grad_evals: int

    def linf(self):
        return float(np.max(np.abs(self.adv.astype(np.float64)
                                   - self.original.astype(np.float64))))

    def budget_ok(self, tol=1e-9):
        lo, hi = self.budget.clamp
        inside = bool(np.all(self.adv >= lo) and np.all(self.adv <= hi))
        return inside and self.linf() <= self.budget.eps + tol


# ---- gradient sources ------------------------------------------------------


class _DimParams(NamedTuple):
    sh: int
    sw: int
    oi: int
    oj: int
    src_i: np.ndarray
    src_j: np.ndarray


def _sample_dim(shape, rng, p, max_scale):
    if not 0.0 <= p <= 1.0:
        raise UsageError(f"transform probability must be in [0,1], got {p}")
    if max_scale < 1.0:
        raise UsageError(f"max_scale must be >= 1, got {max_scale}")
    if rng.random() >= p:
        return None
    h, w, _ = shape
    hmin = max(1, int(round(h / max_scale)))
    wmin = max(1, int(round(w / max_scale)))
    sh = int(rng.integers(hmin, h + 1))
    sw = int(rng.integers(wmin, w + 1))
    oi = int(rng.integers(0, h - sh + 1))
    oj = int(rng.integers(0, w - sw + 1))
    src_i = np.minimum(np.floor((np.arange(sh) + 0.5) * h / sh).astype(np.int64), h - 1)
    src_j = np.minimum(np.floor((np.arange(sw) + 0.5) * w / sw).astype(np.int64), w - 1)
    return _DimParams(sh, sw, oi, oj, src_i, src_j)


def _dim_apply(xs, dp):
    out = np.zeros_like(xs)
    out[:, dp.oi:dp.oi + dp.sh, dp.oj:dp.oj + dp.sw, :] = \
        xs[:, dp.src_i[:, None], dp.src_j[None, :], :]
    return out


def _dim_adjoint(g, dp):
    b, h, w, c = g.shape
    sub = g[:, dp.oi:dp.oi + dp.sh, dp.oj:dp.oj + dp.sw, :]
    flat = np.zeros((b, h * w, c), dtype=g.dtype)
    idx = (dp.src_i[:, None] * w + dp.src_j[None, :]).ravel()
    np.add.at(flat, (np.arange(b)[:, None], idx[None, :]), sub.reshape(b, -1, c))
    return flat.reshape(b, h, w, c)


def dim_transform(x, rng, p=0.5, max_scale=1.33):
    """Random shrink-and-pad: nearest-neighbor resize to a random smaller size,
    then zero-pad back to the original size at a random offset (applied with
    probability ``p``; ``max_scale`` bounds the shrink factor)."""
    x = np.asarray(x)
    dp = _sample_dim(x.shape, rng, p, max_scale)
    if dp is None:
        return x.copy()
    return _dim_apply(x[None], dp)[0]


def sim_gradient(model, x, y, m):
    """Average input gradient over the scaled copies x / 2^i, i = 0..m-1."""
    if m < 1:
        raise UsageError(f"m must be >= 1, got {m}")
    x = np.asarray(x)
    xs = np.stack([x * (x.dtype.type(0.5) ** i) for i in range(m)])
    _, grads = model.loss_and_input_grads(xs, [y] * m)
    return grads.mean(axis=0)


class GradSource:
    """Gradient evaluator over one model or an equal-weight logit ensemble,
    optionally seen through an input transform.  Counts logical gradient
    evaluations (one per example row) in ``evals``."""

    def __init__(self, models, transform="none", rng=None,
                 dim_p=0.5, dim_max_scale=1.33, sim_copies=5):
        if not isinstance(models, (list, tuple)):
            models = [models]
        if not models:
            raise UsageError("need at least one model")
        shape = models[0].input_shape
        classes = models[0].n_classes
        for m in models[1:]:
            if m.input_shape != shape or m.n_classes != classes:
                raise UsageError("ensemble members must share input shape and classes")
        if transform not in ("none", "dim", "sim"):
            raise UsageError(f"unknown transform {transform!r}")
        if transform == "dim" and rng is None:
            raise UsageError("the dim transform needs an rng")
        if sim_copies < 1:
            raise UsageError(f"sim_copies must be >= 1, got {sim_copies}")
        self.models = list(models)
        self.transform = transform
        self.rng = rng
        self.dim_p = dim_p
        self.dim_max_scale = dim_max_scale
        self.sim_copies = sim_copies
        self.evals = 0

    @property
    def dtype(self):
        return self.models[0].dtype

    @property
    def input_shape(self):
        return self.models[0].input_shape

    def _raw(self, xs, ys):
        self.evals += len(xs)
        if len(self.models) == 1:
            return self.models[0].loss_and_input_grads(xs, ys)
        g = engine.Graph()
        xt = g.leaf(np.asarray(xs, self.dtype))
        acc = None
        for m in self.models:
            logits = m.logits_graph(g, xt, m.wrap_params(g))
            acc = logits if acc is None else g.add(acc, logits)
        acc = g.scale(acc, 1.0 / len(self.models))
        loss = g.softmax_cross_entropy(acc, ys, reduction="sum")
        g.backward(loss)
        return loss.aux.copy(), xt.grad

    def loss_and_grads(self, xs, ys):
        xs = np.asarray(xs)
        if self.transform == "none":
            return self._raw(xs, ys)
        if self.transform == "dim":
            dp = _sample_dim(xs.shape[1:], self.rng, self.dim_p, self.dim_max_scale)
            if dp is None:
                return self._raw(xs, ys)
            losses, grads = self._raw(_dim_apply(xs, dp), ys)
            return losses, _dim_adjoint(grads, dp)
        # sim: average losses and gradients over the scaled copies
        acc_l = None
        acc_g = None
        for i in range(self.sim_copies):
            losses, grads = self._raw(xs * (xs.dtype.type(0.5) ** i), ys)
            acc_l = losses if acc_l is None else acc_l + losses
            acc_g = grads if acc_g is None else acc_g + grads
        inv = 1.0 / self.sim_copies
        return acc_l * inv, acc_g * acc_g.dtype.type(inv)


def ensemble_logits(models, x):
    """Unweighted mean of per-model logits for one image or a batch."""
    if not isinstance(models, (list, tuple)):
        models = [models]
    if not models:
        raise UsageError("need at least one model")
    x = np.asarray(x)
    batched = x.ndim == len(models[0].input_shape) + 1
    xs = x if batched else x[None]
    out = np.mean([m.logits(xs) for m in models], axis=0)
    return out if batched else out[0]


# ---- shared update machinery ------------------------------------------------


def _band(x0, budget):
    """Float32 projection band for the eps-ball intersected with the pixel range.

    Endpoints are rounded toward the original image, so any float32 value
    clipped into the band satisfies |x - x0| <= eps exactly in 64-bit terms.
    """
    x64 = x0.astype(np.float64)
    hi64 = x64 + budget.eps
    lo64 = x64 - budget.eps
    hi = hi64.astype(np.float32)
    lo = lo64.astype(np.float32)
    hi = np.where(hi.astype(np.float64) > hi64,
                  np.nextafter(hi, np.float32(-np.inf)), hi)
    lo = np.where(lo.astype(np.float64) < lo64,
                  np.nextafter(lo, np.float32(np.inf)), lo)
    np.maximum(hi, x0, out=hi)
    np.minimum(lo, x0, out=lo)
    np.minimum(hi, np.float32(budget.clamp[1]), out=hi)
    np.maximum(lo, np.float32(budget.clamp[0]), out=lo)
    return lo, hi


def _l1(g):
    return float(np.abs(g).sum())


def _sign_step(x_adv, g, alpha, lo, hi):
    step = alpha * np.sign(g).astype(np.float32)
    return np.clip(x_adv + step, lo, hi)


def _momentum_loop(src, x0, y, budget, gbar_fn, method, zero_policy="accumulate"):
    """Shared driver: momentum accumulation, sign step, band projection.

    ``gbar_fn(t, x_adv, momentum) -> (gbar, loss, flagged)`` supplies the
    per-iteration gradient estimate.  ``zero_policy`` decides what a zero
    estimate does: "accumulate" decays the momentum and still steps,
    "skip" leaves momentum and iterate untouched (flagged either way).
    """
    lo, hi = _band(x0, budget)
    alpha = np.float32(budget.step_size)
    x_adv = x0.copy()
    momentum = None
    records = []
    for t in range(budget.steps):
        gbar, loss, flagged = gbar_fn(t, x_adv, momentum)
        if momentum is None:
            momentum = np.zeros_like(gbar)
        l1 = _l1(gbar)
        if l1 == 0.0:
            flagged = True
            if zero_policy == "skip":
                records.append(IterRecord(loss, 0.0, _l1(momentum), True))
                continue
            momentum = budget.decay * momentum
        else:
            momentum = (gbar.dtype.type(budget.decay) * momentum
                        + gbar / gbar.dtype.type(l1))
        x_adv = _sign_step(x_adv, momentum, alpha, lo, hi)
        records.append(IterRecord(loss, l1, _l1(momentum), flagged))
    return AdvResult(method, x0, x_adv, int(y), budget, tuple(records), src.evals)


# ---- attack methods ---------------------------------------------------------


def ifgsm(model, x, y, budget, transform="none", rng=None, **tkw):
    """Iterative sign-gradient ascent within the eps-ball (no momentum)."""
    src = GradSource(model, transform, rng, **tkw)
    x0 = np.asarray(x, np.float32)
    lo, hi = _band(x0, budget)
    alpha = np.float32(budget.step_size)
    x_adv = x0.copy()
    records = []
    for _ in range(budget.steps):
        losses, grads = src.loss_and_grads(x_adv[None], [y])
        g = grads[0]
        x_adv = _sign_step(x_adv, g, alpha, lo, hi)
        records.append(IterRecord(float(losses[0]), _l1(g), 0.0, False))
    return AdvResult("ifgsm", x0, x_adv, int(y), budget, tuple(records), src.evals)


def mifgsm(model, x, y, budget, transform="none", rng=None, **tkw):
    """Momentum variant: the L1-normalized gradient feeds a decayed accumulator."""
    src = GradSource(model, transform, rng, **tkw)
    x0 = np.asarray(x, np.float32)

    def gbar_fn(t, x_adv, momentum):
        losses, grads = src.loss_and_grads(x_adv[None], [y])
        return grads[0], float(losses[0]), False

    return _momentum_loop(src, x0, y, budget, gbar_fn, "mifgsm")


def nifgsm(model, x, y, budget, transform="none", rng=None, **tkw):
    """Momentum with a lookahead: the gradient is taken at x + a*mu*momentum."""
    src = GradSource(model, transform, rng, **tkw)
    x0 = np.asarray(x, np.float32)
    alpha = np.float32(budget.step_size)
    mu = np.float32(budget.decay)

    def gbar_fn(t, x_adv, momentum):
        x_nes = x_adv if momentum is None else \
            x_adv + alpha * mu * momentum.astype(np.float32)
        losses, grads = src.loss_and_grads(x_nes[None], [y])
        return grads[0], float(losses[0]), False

    return _momentum_loop(src, x0, y, budget, gbar_fn, "nifgsm")


def vmifgsm(model, x, y, budget, params, rng, transform="none", **tkw):
    """Variance-tuned momentum: the update adds the gradient variance of the
    previous iterate's neighborhood (sampled uniformly in the beta-ball)."""
    if rng is None:
        raise UsageError("vmifgsm needs an rng")
    src = GradSource(model, transform, rng, **tkw)
    x0 = np.asarray(x, np.float32)
    beta = params.vmi_beta_factor * budget.eps
    n = params.vmi_samples
    state = {"v": None}

    def gbar_fn(t, x_adv, momentum):
        losses, grads = src.loss_and_grads(x_adv[None], [y])
        ghat = grads[0]
        gbar = ghat if state["v"] is None else ghat + state["v"]
        offs = rng.uniform(-beta, beta, (n,) + x_adv.shape).astype(np.float32)
        _, sgrads = src.loss_and_grads(x_adv[None] + offs, [y] * n)
        state["v"] = sgrads.mean(axis=0) - ghat
        return gbar, float(losses[0]), False

    return _momentum_loop(src, x0, y, budget, gbar_fn, "vmi")


def emifgsm(model, x, y, budget, params, transform="none", rng=None, **tkw):
    """Enhanced momentum: averages gradients at points spread linearly along
    the previous iteration's average gradient direction."""
    src = GradSource(model, transform, rng, **tkw)
    x0 = np.asarray(x, np.float32)
    n = params.emi_samples
    cs = np.linspace(-1.0, 1.0, n).astype(np.float32) if n > 1 \
        else np.zeros(1, np.float32)
    eta = np.float32(params.emi_eta / 255.0)  # eta is quoted in 1/255 pixel units
    state = {"gbar": None}

    def gbar_fn(t, x_adv, momentum):
        prev = state["gbar"]
        if prev is None:
            direction = np.zeros_like(x_adv)
        else:
            scale = np.abs(prev).mean()
            direction = (prev / prev.dtype.type(scale)).astype(np.float32) \
                if scale > 0 else np.zeros_like(x_adv)
        offs = cs.reshape((n,) + (1,) * x_adv.ndim) * (eta * direction)[None]
        losses, grads = src.loss_and_grads(x_adv[None] + offs, [y] * n)
        gbar = grads.mean(axis=0)
        state["gbar"] = gbar
        return gbar, float(losses.mean()), False

    return _momentum_loop(src, x0, y, budget, gbar_fn, "emi")


def pgn(models, x, y, budget, params, fd=None, rng=None,
        transform="none", **tkw):
    """Penalizing Gradient Norm attack.

    Per iteration, for each of N samples drawn uniformly in the zeta-ball of
    the current iterate: take the gradient g' at the sample, step to the
    predicted point x* = x' - fd_step * g'/||g'|| (norm per ``fd``), take the
    gradient g* there, and accumulate (1-delta)*g' + delta*g*.  The averaged
    estimate feeds the usual momentum update.  With several models the loss
    is the cross-entropy of their averaged logits.
    """
    if rng is None:
        raise UsageError("pgn needs an rng")
    src = GradSource(models, transform, rng, **tkw)
    if fd is None:
        fd = FdConfig(fd_step=budget.step_size, norm="l1")
    x0 = np.asarray(x, np.float32)
    n = params.samples
    zeta = params.zeta(budget)
    ndim = x0.ndim

    def gbar_fn(t, x_adv, momentum):
        offs = rng.uniform(-zeta, zeta, (n,) + x_adv.shape).astype(np.float32)
        xs_prime = x_adv[None] + offs
        losses1, g1 = src.loss_and_grads(xs_prime, [y] * n)
        flat = g1.reshape(n, -1)
        norms = np.abs(flat).sum(axis=1) if fd.norm == "l1" \
            else np.sqrt((flat * flat).sum(axis=1))
        degenerate = norms == 0.0
        safe = np.where(degenerate, 1.0, norms)
        coeff = (fd.fd_step / safe).astype(g1.dtype).reshape((n,) + (1,) * ndim)
        xs_star = xs_prime - coeff * g1
        _, g2 = src.loss_and_grads(xs_star, [y] * n)
        one = g1.dtype.type(1.0)
        d = g1.dtype.type(params.delta)
        gbar = ((one - d) * g1 + d * g2).mean(axis=0)
        return gbar, float(losses1.mean()), bool(degenerate.any())

    return _momentum_loop(src, x0, y, budget, gbar_fn, "pgn", zero_policy="skip")


def regularized_attack(base, model, x, y, budget, lam=None, zeta=None, rng=None,
                       transform="none", **tkw):
    """Base attack driven by the norm-penalized objective gradient.

    Each step samples one neighbor x' in the zeta-ball and ascends
    grad(x') - lam * HVP(x', g'/||g'||_2): both the loss term and the penalty
    are taken at the sampled point, with the curvature term approximated by a
    forward difference of gradients (three evaluations per step).
    Defaults: lam = 0.5 * step_size (interpolation weight 1/2), zeta = 3*eps.
    """
    if base not in ("ifgsm", "mifgsm"):
        raise UsageError(f"regularized base must be ifgsm or mifgsm, got {base!r}")
    if rng is None:
        raise UsageError("regularized_attack needs an rng")
    if lam is None:
        lam = 0.5 * budget.step_size
    if lam < 0:
        raise UsageError(f"lam must be >= 0, got {lam}")
    if zeta is None:
        zeta = 3.0 * budget.eps
    if zeta < 0:
        raise UsageError(f"zeta must be >= 0, got {zeta}")
    src = GradSource(model, transform, rng, **tkw)
    x0 = np.asarray(x, np.float32)
    fd_step = np.float32(budget.step_size)
    method = f"reg-{base}"

    def reg_grad(x_adv):
        offs = rng.uniform(-zeta, zeta, x_adv.shape).astype(np.float32)
        if lam == 0.0:
            # penalty off: collapse to the plain base-attack gradient
            losses, ga = src.loss_and_grads(x_adv[None], [y])
            return ga[0], float(losses[0]), False
        x_prime = x_adv + offs
        losses, gp = src.loss_and_grads(x_prime[None], [y])
        g_prime = gp[0]
        n2 = float(np.sqrt((g_prime.astype(np.float64) ** 2).sum()))
        if n2 == 0.0:
            return g_prime, float(losses[0]), True
        v = (g_prime / g_prime.dtype.type(n2)).astype(np.float32)
        _, gs = src.loss_and_grads((x_prime + fd_step * v)[None], [y])
        hv = (gs[0] - g_prime) / g_prime.dtype.type(fd_step)
        return g_prime - g_prime.dtype.type(lam) * hv, float(losses[0]), False

    if base == "ifgsm":
        lo, hi = _band(x0, budget)
        alpha = np.float32(budget.step_size)
        x_adv = x0.copy()
        records = []
        for _ in range(budget.steps):
            g, loss, flagged = reg_grad(x_adv)
            x_adv = _sign_step(x_adv, g, alpha, lo, hi)
            records.append(IterRecord(loss, _l1(g), 0.0, flagged))
        return AdvResult(method, x0, x_adv, int(y), budget, tuple(records),
                         src.evals)

    def gbar_fn(t, x_adv, momentum):
        return reg_grad(x_adv)

    return _momentum_loop(src, x0, y, budget, gbar_fn, method)
