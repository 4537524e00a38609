"""Diffusion process schedules, prediction targets, loss weightings, and time samplers.

A forward process mixes data and noise as ``z = alpha(t) x + sigma(t) n``; the
network regresses a target ``u = phi(t) x + psi(t) n``.  Training may minimise
the MSE of a different linear combination ``w = xi(t) x + eta(t) n``, which is
equivalent to weighting the target MSE by ``kappa(t)^2`` with

    kappa = (xi sigma - eta alpha) / (phi sigma - psi alpha)

All types here are immutable after construction and safe to share across
threads; samplers take an explicit ``numpy.random.Generator`` so parallel
callers can use independent streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .errors import DegenerateTarget

ScheduleFn = Callable[[np.ndarray], np.ndarray]

_EPS = float(np.finfo(np.float64).eps)


def _farray(t) -> np.ndarray:
    return np.asarray(t, dtype=np.float64)


def _match_scalar(out: np.ndarray, t_in) -> Union[float, np.ndarray]:
    # mirror scalar inputs with scalar outputs
    if np.ndim(t_in) == 0:
        return float(out)
    return out


def constant_fn(value: float) -> ScheduleFn:
    """Schedule function that is constant in t."""
    v = float(value)

    def fn(t):
        return np.full(np.shape(t), v)

    return fn


@dataclass(frozen=True)
class ProcessSpec:
    """Forward-process coefficients: noisy input is ``alpha(t) x + sigma(t) n``."""

    alpha: ScheduleFn
    sigma: ScheduleFn
    name: str = "custom"


FLOW_MATCHING = ProcessSpec(
    alpha=lambda t: _farray(t) + 0.0,
    sigma=lambda t: 1.0 - _farray(t),
    name="flow_matching",
)


@dataclass(frozen=True)
class TargetSpec:
    """Prediction-target coefficients: the regressed quantity is ``phi(t) x + psi(t) n``."""

    phi: ScheduleFn
    psi: ScheduleFn
    name: str = "custom"
    k: float | None = None


EPSILON_TARGET = TargetSpec(constant_fn(0.0), constant_fn(1.0), name="epsilon")
X_TARGET = TargetSpec(constant_fn(1.0), constant_fn(0.0), name="x")
V_TARGET = TargetSpec(constant_fn(1.0), constant_fn(-1.0), name="v")


def k_target(k: float) -> TargetSpec:
    """Interpolating target ``k x - (1 - k) n``.

    k = 0, 0.5, 1 recover (up to constant scale) epsilon-, v- and x-prediction.
    Values outside [0, 1] are rejected; the theory is developed on that
    interval only.
    """
    k = float(k)
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"k must lie in [0, 1], got {k}")
    return TargetSpec(constant_fn(k), constant_fn(-(1.0 - k)), name=f"k({k:g})", k=k)


@dataclass(frozen=True)
class LossTargetSpec:
    """Training-variable coefficients ``w = xi(t) x + eta(t) n``.

    ``follows_target`` marks the plain target loss (w == u), whose scale
    factor is identically 1 for every process/target pair.
    """

    xi: ScheduleFn | None
    eta: ScheduleFn | None
    name: str = "custom"
    follows_target: bool = False


U_LOSS = LossTargetSpec(None, None, name="u", follows_target=True)
X_LOSS = LossTargetSpec(constant_fn(1.0), constant_fn(0.0), name="x")
EPSILON_LOSS = LossTargetSpec(constant_fn(0.0), constant_fn(1.0), name="epsilon")
V_LOSS = LossTargetSpec(constant_fn(1.0), constant_fn(-1.0), name="v")


def kappa(
    process: ProcessSpec,
    target: TargetSpec,
    loss: LossTargetSpec,
    t,
    clamp_floor: float | None = None,
):
    """Scale factor relating the loss-variable error to the target error.

    Raises DegenerateTarget where |phi sigma - psi alpha| falls below machine
    epsilon, unless an explicit clamp floor is supplied, in which case the
    denominator magnitude is clamped (sign preserved).  The clamp is opt-in:
    analytic callers should not silently mask singular configurations.
    """
    tt = _farray(t)
    if loss.follows_target:
        return _match_scalar(np.ones(tt.shape), t)
    a = _farray(process.alpha(tt))
    s = _farray(process.sigma(tt))
    num = _farray(loss.xi(tt)) * s - _farray(loss.eta(tt)) * a
    den = _farray(target.phi(tt)) * s - _farray(target.psi(tt)) * a
    if clamp_floor is None:
        if np.any(np.abs(den) < _EPS):
            raise DegenerateTarget(
                f"phi*sigma - psi*alpha vanishes for target {target.name!r} "
                f"(min |denominator| = {np.min(np.abs(den)):.3e})"
            )
    else:
        den = np.where(
            den >= 0.0,
            np.maximum(den, clamp_floor),
            np.minimum(den, -clamp_floor),
        )
    return _match_scalar(num / den, t)


def make_kappa(
    process: ProcessSpec,
    target: TargetSpec,
    loss: LossTargetSpec,
    clamp_floor: float | None = None,
) -> ScheduleFn:
    """Bind kappa's configuration, leaving a function of t alone."""

    def fn(t):
        return kappa(process, target, loss, t, clamp_floor=clamp_floor)

    return fn


@dataclass(frozen=True)
class TimeMeasure:
    """Sampling distribution for diffusion time on a subinterval of [0, 1].

    kind is "uniform" or "logit_normal"; the latter draws t = sigmoid(g) with
    g ~ Normal(mu, sigma_ln^2), truncated to the interval when it is a proper
    subinterval.  The density integrates to 1 over the interval.
    """

    kind: str = "uniform"
    interval: tuple[float, float] = (0.0, 1.0)
    mu: float = 0.0
    sigma_ln: float = 1.0

    def __post_init__(self):
        lo, hi = self.interval
        object.__setattr__(self, "interval", (float(lo), float(hi)))
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError(f"interval must satisfy 0 <= lo < hi <= 1, got {self.interval}")
        if self.kind not in ("uniform", "logit_normal"):
            raise ValueError(f"unknown time-measure kind {self.kind!r}")
        if self.kind == "logit_normal" and self.sigma_ln <= 0.0:
            raise ValueError("sigma_ln must be positive")

    def _gauss_bounds(self) -> tuple[float, float]:
        lo, hi = self.interval
        ga = -math.inf if lo <= 0.0 else (math.log(lo / (1.0 - lo)) - self.mu) / self.sigma_ln
        gb = math.inf if hi >= 1.0 else (math.log(hi / (1.0 - hi)) - self.mu) / self.sigma_ln
        return ga, gb

    def density(self, t):
        """Probability density at t; zero outside the interval."""
        tt = np.atleast_1d(_farray(t))
        lo, hi = self.interval
        inside = (tt >= lo) & (tt <= hi)
        if self.kind == "uniform":
            out = np.where(inside, 1.0 / (hi - lo), 0.0)
        else:
            ga, gb = self._gauss_bounds()
            norm = ndtr(gb) - ndtr(ga)
            # the density vanishes (in the limit) at t = 0 and t = 1
            interior = inside & (tt > 0.0) & (tt < 1.0)
            out = np.zeros(tt.shape)
            ti = tt[interior]
            g = (np.log(ti / (1.0 - ti)) - self.mu) / self.sigma_ln
            out[interior] = np.exp(-0.5 * g * g) / (
                self.sigma_ln * math.sqrt(2.0 * math.pi) * ti * (1.0 - ti) * norm
            )
        return _match_scalar(out.reshape(np.shape(t)), t)

    def cdf(self, t):
        """Cumulative distribution at t (for goodness-of-fit checks)."""
        tt = _farray(t)
        lo, hi = self.interval
        if self.kind == "uniform":
            out = np.clip((tt - lo) / (hi - lo), 0.0, 1.0)
            return _match_scalar(out, t)
        ga, gb = self._gauss_bounds()
        za, zb = ndtr(ga), ndtr(gb)
        tc = np.clip(tt, 1e-300, 1.0 - 1e-16)
        g = (np.log(tc / (1.0 - tc)) - self.mu) / self.sigma_ln
        out = np.clip((ndtr(g) - za) / (zb - za), 0.0, 1.0)
        out = np.where(tt <= lo, 0.0, np.where(tt >= hi, 1.0, out))
        return _match_scalar(out, t)


UNIFORM_MEASURE = TimeMeasure()


def uniform_measure(interval: tuple[float, float] = (0.0, 1.0)) -> TimeMeasure:
    return TimeMeasure(kind="uniform", interval=interval)


def logit_normal_measure(
    mu: float, sigma: float, interval: tuple[float, float] = (0.0, 1.0)
) -> TimeMeasure:
    return TimeMeasure(kind="logit_normal", interval=interval, mu=mu, sigma_ln=sigma)


def sample_t(measure: TimeMeasure, rng: np.random.Generator, size: int | None = None):
    """Draw diffusion times from the measure.

    Logit-normal draws are sigmoid-of-normal; on a proper subinterval the
    underlying normal is sampled by inverse transform of its truncation.
    """
    lo, hi = measure.interval
    if measure.kind == "uniform":
        out = lo + (hi - lo) * rng.random(size)
    elif lo <= 0.0 and hi >= 1.0:
        g = measure.mu + measure.sigma_ln * rng.standard_normal(size)
        out = expit(g)
    else:
        ga, gb = measure._gauss_bounds()
        za, zb = ndtr(ga), ndtr(gb)
        u = rng.random(size)
        g = measure.mu + measure.sigma_ln * ndtri(za + u * (zb - za))
        out = np.clip(expit(g), lo, hi)
    if size is None:
        return float(out)
    return out


def effective_weight(measure: TimeMeasure, kappa_fn: ScheduleFn, t):
    """Density of the effective measure: sampling density times kappa squared."""
    tt = _farray(t)
    kap = _farray(kappa_fn(tt))
    out = _farray(measure.density(tt)) * kap * kap
    return _match_scalar(out, t)
