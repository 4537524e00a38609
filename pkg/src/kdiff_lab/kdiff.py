"""Trainer with a learnable prediction-target parameter.

The network regresses ``u = k x - (1 - k) e`` from ``z = t x + (1 - t) e``
under flow matching, where ``k = sigmoid(w_k)`` is either a trainable scalar
or a piecewise-linear function of t over N bins.  The loss is either the
plain target MSE or the velocity MSE obtained by converting both the target
and the prediction to velocities with a clamped denominator.  Gradients are
hand-derived and flow through every appearance of k (target, numerator, and
denominator), with the clamp contributing zero subgradient where active.

A training run is single-threaded and deterministic given its seed; seed
sweeps can run as independent processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NonFiniteLoss
from .geometry import ColoredCovariance, ManifoldBasis, sample_colored, sample_data
from .schedule import UNIFORM_MEASURE, TimeMeasure, sample_t
from .seeding import derive_rng


def _logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"need 0 < k_init < 1, got {p}")
    return math.log(p / (1.0 - p))


class KParam:
    """Learnable prediction-target parameter, k = sigmoid(raw).

    Constant mode holds a single pre-sigmoid scalar; binned mode holds one
    value per knot t_i = i/N and evaluates k(t) by linear interpolation of
    the sigmoid-transformed knots, so k is continuous and piecewise linear
    and stays strictly inside (0, 1) for finite raw values.
    """

    def __init__(self, raw, trainable: bool = True):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim > 1:
            raise ValueError("raw must be a scalar or a 1-d knot vector")
        if raw.ndim == 1 and raw.size < 2:
            raise ValueError("binned mode needs at least 2 knots")
        self.raw = raw
        self.trainable = trainable

    @classmethod
    def constant(cls, k_init: float = 0.5, trainable: bool = True) -> "KParam":
        return cls(np.asarray(_logit(k_init)), trainable)

    @classmethod
    def binned(cls, n_bins: int = 128, k_init: float = 0.5, trainable: bool = True) -> "KParam":
        if n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        return cls(np.full(n_bins + 1, _logit(k_init)), trainable)

    @property
    def is_binned(self) -> bool:
        return self.raw.ndim == 1

    @property
    def n_bins(self) -> int:
        return self.raw.size - 1 if self.is_binned else 1

    def knots(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.raw.size if self.is_binned else 2)

    def value(self, t):
        """k(t); scalar in, scalar out."""
        tt = np.asarray(t, dtype=np.float64)
        if not self.is_binned:
            out = np.full(tt.shape, float(expit(self.raw)))
        else:
            out = np.interp(tt, self.knots(), expit(self.raw))
        if np.ndim(t) == 0:
            return float(out)
        return out

    def grad_raw(self, t, dloss_dk) -> np.ndarray:
        """Chain per-sample dloss/dk back to the pre-sigmoid parameters.

        Binned mode distributes each sample's contribution to its two
        bracketing knots by the interpolation weights.
        """
        dloss_dk = np.asarray(dloss_dk, dtype=np.float64)
        if not self.is_binned:
            s = float(expit(self.raw))
            return np.asarray(float(np.sum(dloss_dk)) * s * (1.0 - s))
        tt = np.asarray(t, dtype=np.float64)
        n = self.n_bins
        pos = np.clip(tt, 0.0, 1.0) * n
        left = np.minimum(pos.astype(np.int64), n - 1)
        frac = pos - left
        knot_k = expit(self.raw)
        dsig = knot_k * (1.0 - knot_k)
        grad = np.zeros_like(self.raw)
        np.add.at(grad, left, dloss_dk * (1.0 - frac) * dsig[left])
        np.add.at(grad, left + 1, dloss_dk * frac * dsig[left + 1])
        return grad


def k_value(param: KParam, t):
    """k(t) for a scalar or vector of times."""
    return param.value(t)


def u_to_v(u, z, t, k, clamp_floor: float = 0.05):
    """Convert a target-space value to a velocity.

    v = ((1 - 2k) z + u) / max(k (1 - t) + (1 - k) t, clamp_floor).
    The clamp removes the division singularity at the ends of the time range.
    """
    u = np.asarray(u, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if u.ndim == 2:
        if t.ndim == 1:
            t = t[:, None]
        if k.ndim == 1:
            k = k[:, None]
    den = np.maximum(k * (1.0 - t) + (1.0 - k) * t, clamp_floor)
    return ((1.0 - 2.0 * k) * z + u) / den


class PureLinear:
    """Single linear layer, u_hat = z @ W.T; no time dependence.

    Matches the setting of the analytic theory exactly.
    """

    def __init__(self, weight):
        self.weight = np.array(weight, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.weight.shape[1]:
            raise ValueError(f"weight must be square, got shape {self.weight.shape}")

    @classmethod
    def zeros(cls, dim: int) -> "PureLinear":
        return cls(np.zeros((dim, dim)))

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight}

    def forward(self, z, t):
        return np.asarray(z, dtype=np.float64) @ self.weight.T

    def forward_cache(self, z, t):
        z = np.asarray(z, dtype=np.float64)
        return z @ self.weight.T, z

    def backward(self, cache, grad_out) -> dict[str, np.ndarray]:
        return {"weight": grad_out.T @ cache}


def _silu(x):
    s = expit(x)
    return x * s, s


class TwoLayer:
    """Affine -> SiLU -> affine, with the time appended to the input.

    SiLU (x * sigmoid(x)) is smooth everywhere, so finite-difference
    gradient checks are clean.
    """

    def __init__(self, w1, b1, w2, b2):
        self.w1 = np.array(w1, dtype=np.float64)
        self.b1 = np.array(b1, dtype=np.float64)
        self.w2 = np.array(w2, dtype=np.float64)
        self.b2 = np.array(b2, dtype=np.float64)

    @classmethod
    def init(cls, dim: int, hidden: int, rng: np.random.Generator) -> "TwoLayer":
        w1 = rng.standard_normal((hidden, dim + 1)) / math.sqrt(dim + 1)
        w2 = rng.standard_normal((dim, hidden)) / math.sqrt(hidden)
        return cls(w1, np.zeros(hidden), w2, np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def _stack_input(self, z, t):
        z = np.asarray(z, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (z.shape[0],))
        return np.concatenate([z, t[:, None]], axis=1)

    def forward(self, z, t):
        inp = self._stack_input(z, t)
        pre = inp @ self.w1.T + self.b1
        act, _ = _silu(pre)
        return act @ self.w2.T + self.b2

    def forward_cache(self, z, t):
        inp = self._stack_input(z, t)
        pre = inp @ self.w1.T + self.b1
        act, sig = _silu(pre)
        out = act @ self.w2.T + self.b2
        return out, (inp, pre, act, sig)

    def backward(self, cache, grad_out) -> dict[str, np.ndarray]:
        inp, pre, act, sig = cache
        g_act = grad_out @ self.w2
        g_pre = g_act * sig * (1.0 + pre * (1.0 - sig))
        return {
            "w1": g_pre.T @ inp,
            "b1": g_pre.sum(axis=0),
            "w2": grad_out.T @ act,
            "b2": grad_out.sum(axis=0),
        }


@dataclass(frozen=True)
class TrainConfig:
    """Settings for a training run.

    loss_mode "u" is the plain target MSE (the mode whose trainable-k fixed
    point is compared against the closed-form optimum); "v_alg1" converts
    target and prediction to velocities first, which weights the target MSE
    by the squared conversion factor.
    """

    loss_mode: str = "u"
    optimizer: str = "adam"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    batch: int = 256
    steps: int = 20_000
    seed: int = 0
    clamp_floor: float = 0.05
    k_trainable: bool = True
    k_init: float = 0.5
    stop_grad_target: bool = False
    measure: TimeMeasure = UNIFORM_MEASURE

    def __post_init__(self):
        if self.loss_mode not in ("u", "v_alg1"):
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.clamp_floor < 1.0:
            raise ValueError("clamp_floor must lie in (0, 1)")
        if self.batch < 1 or self.steps < 1:
            raise ValueError("batch and steps must be >= 1")


def make_kparam(config: TrainConfig, n_bins: int | None = None) -> KParam:
    """Build the k parameter a config describes (binned when n_bins is given)."""
    if n_bins is None:
        return KParam.constant(config.k_init, trainable=config.k_trainable)
    return KParam.binned(n_bins, config.k_init, trainable=config.k_trainable)


def training_step(net, kparam: KParam, x: np.ndarray, config: TrainConfig, rng: np.random.Generator):
    """One step: draw (t, e), form input and target, return loss and gradients.

    Gradient keys are "net.<param>" plus "k" when the target parameter is
    trainable.  The returned loss is the batch mean of per-sample halved
    squared errors.
    """
    x = np.asarray(x, dtype=np.float64)
    batch, dim = x.shape
    t = sample_t(config.measure, rng, size=batch)
    e = rng.standard_normal((batch, dim))
    k = np.asarray(kparam.value(t), dtype=np.float64)
    tc, kc = t[:, None], k[:, None]
    z = tc * x + (1.0 - tc) * e
    u = kc * x - (1.0 - kc) * e
    u_hat, cache = net.forward_cache(z, t)

    dldk = None
    if config.loss_mode == "u":
        r = u_hat - u
        loss = 0.5 * float(np.sum(r * r)) / batch
        g_uhat = r / batch
        if kparam.trainable and not config.stop_grad_target:
            dldk = -np.einsum("ij,ij->i", r, x + e) / batch
    else:
        raw_den = k * (1.0 - t) + (1.0 - k) * t
        den = np.maximum(raw_den, config.clamp_floor)
        denc = den[:, None]
        gain = 1.0 - 2.0 * kc
        v = (gain * z + u) / denc
        v_pred = (gain * z + u_hat) / denc
        r = v_pred - v
        loss = 0.5 * float(np.sum(r * r)) / batch
        g_uhat = r / denc / batch
        if kparam.trainable:
            dden = np.where(raw_den > config.clamp_floor, 1.0 - 2.0 * t, 0.0)
            if config.stop_grad_target:
                dldk = (
                    -2.0 * np.einsum("ij,ij->i", r, z) / den
                    - np.einsum("ij,ij->i", r, v_pred) * dden / den
                ) / batch
            else:
                dldk = (
                    -np.einsum("ij,ij->i", r, x + e) / den
                    - np.einsum("ij,ij->i", r, r) * dden / den
                ) / batch

    if not np.isfinite(loss):
        raise NonFiniteLoss(f"training loss is {loss!r}")
    grads = {f"net.{name}": g for name, g in net.backward(cache, g_uhat).items()}
    if kparam.trainable:
        if dldk is None:
            grads["k"] = np.zeros_like(kparam.raw)
        else:
            grads["k"] = kparam.grad_raw(t, dldk)
    return loss, grads


@dataclass
class OptimizerState:
    """First/second moment accumulators keyed like the parameter dict."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    config: TrainConfig,
) -> OptimizerState:
    """Apply one SGD or bias-corrected Adam update in place."""
    state.step += 1
    if config.optimizer == "sgd":
        for name, p in params.items():
            p -= config.lr * grads[name]
        return state
    c1 = 1.0 - config.beta1**state.step
    c2 = 1.0 - config.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        p -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return state


K_PROBES = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


@dataclass(frozen=True)
class TrainHistory:
    """Per-step losses and k snapshots (taken after each update)."""

    steps: np.ndarray
    losses: np.ndarray
    k_values: np.ndarray
    probe_points: np.ndarray | None = None

    @property
    def final_k(self):
        last = self.k_values[-1]
        if np.ndim(last) == 0:
            return float(last)
        return np.asarray(last)


def _draw_batch(data_source, batch: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(data_source, ManifoldBasis):
        return sample_data(data_source, batch, rng)
    if isinstance(data_source, ColoredCovariance):
        return sample_colored(data_source, batch, rng)
    return data_source(batch, rng)


def train(net, kparam: KParam, data_source, config: TrainConfig) -> TrainHistory:
    """Run the training loop on fresh batches from the data source.

    data_source is a manifold basis, a colored covariance, or a callable
    (batch, rng) -> rows.  Deterministic given config.seed.
    """
    rng = derive_rng(config.seed, "kdiff", "train")
    params = {f"net.{name}": p for name, p in net.params().items()}
    if kparam.trainable:
        params["k"] = kparam.raw
    state = OptimizerState()
    steps = np.arange(1, config.steps + 1)
    losses = np.empty(config.steps)
    if kparam.is_binned:
        k_values = np.empty((config.steps, K_PROBES.size))
        probes = K_PROBES.copy()
    else:
        k_values = np.empty(config.steps)
        probes = None
    for i in range(config.steps):
        x = _draw_batch(data_source, config.batch, rng)
        loss, grads = training_step(net, kparam, x, config, rng)
        optimizer_step(params, grads, state, config)
        losses[i] = loss
        if kparam.is_binned:
            k_values[i] = kparam.value(K_PROBES)
        else:
            k_values[i] = kparam.value(0.5)
    return TrainHistory(steps, losses, k_values, probes)
