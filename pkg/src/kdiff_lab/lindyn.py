"""Single-layer linear diffusion model: exact expected dynamics and Monte Carlo oracle.

The model predicts the target as ``u_hat = W z`` with a time-independent
D x D weight.  Its training loss is a positive-semidefinite quadratic in W
whose gradient-flow dynamics decouple into a mode parallel to the data
manifold (data recovery) and one perpendicular to it (noise elimination).
The exact expected gradient is affine in W, so it can be assembled from
precomputed moments with no per-step quadrature.

``monte_carlo_loss`` estimates the same training loss by simulation and is
the independent oracle for the closed-form equilibrium loss.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .analytic import MomentSet, compute_moments, optimal_weight_coeffs
from .errors import DimError, Divergence
from .geometry import ManifoldBasis, sample_data, sample_noise
from .schedule import (
    FLOW_MATCHING,
    U_LOSS,
    UNIFORM_MEASURE,
    LossTargetSpec,
    ProcessSpec,
    TargetSpec,
    TimeMeasure,
    k_target,
    make_kappa,
    sample_t,
)


@dataclass(frozen=True)
class ModeDecomposition:
    """Weight split into its manifold-parallel and perpendicular components."""

    parallel: np.ndarray
    perpendicular: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.parallel + self.perpendicular


@dataclass(frozen=True)
class FlowConfig:
    """Gradient-flow integration settings.

    mode "exact" uses the expected gradient assembled from moments;
    "stochastic" draws a fresh batch per step.  step_size is the learning
    rate of the explicit Euler discretisation.
    """

    step_size: float
    steps: int
    mode: str = "exact"
    batch: int = 256

    def __post_init__(self):
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.mode not in ("exact", "stochastic"):
            raise ValueError(f"unknown gradient mode {self.mode!r}")


@dataclass(frozen=True)
class FlowRecord:
    """Trajectory snapshot: weight components, loss, and distances to equilibrium."""

    step: int
    weight_par: np.ndarray
    weight_perp: np.ndarray
    loss: float
    dist_par: float
    dist_perp: float

    @property
    def weight(self) -> np.ndarray:
        return self.weight_par + self.weight_perp


def decompose(weight: np.ndarray, basis: ManifoldBasis) -> ModeDecomposition:
    """Split a weight into components acting on the manifold and its complement."""
    weight = np.asarray(weight, dtype=np.float64)
    if weight.shape != (basis.ambient_dim, basis.ambient_dim):
        raise DimError(
            f"weight shape {weight.shape} does not match ambient dimension {basis.ambient_dim}"
        )
    par = weight @ basis.projector()
    return ModeDecomposition(par, weight - par)


def equilibrium_weight(basis: ManifoldBasis, moments: MomentSet) -> np.ndarray:
    """Global minimiser of the quadratic training loss (the flow's fixed point)."""
    c_par, c_perp = optimal_weight_coeffs(moments)
    proj = basis.projector()
    return c_par * proj + c_perp * (np.eye(basis.ambient_dim) - proj)


def exact_gradient(weight: np.ndarray, basis: ManifoldBasis, moments: MomentSet) -> np.ndarray:
    """Expected descent direction at the given weight.

    A gradient-flow step is ``weight + step_size * exact_gradient(...)``;
    the returned matrix vanishes exactly at the equilibrium weight.
    """
    weight = np.asarray(weight, dtype=np.float64)
    if weight.shape != (basis.ambient_dim, basis.ambient_dim):
        raise DimError(
            f"weight shape {weight.shape} does not match ambient dimension {basis.ambient_dim}"
        )
    proj = basis.projector()
    eye = np.eye(basis.ambient_dim)
    return -(
        moments.alpha_sq * weight @ proj
        + moments.sigma_sq * weight
        - moments.phi_alpha * proj
        - moments.psi_sigma * eye
    )


def stochastic_gradient(
    weight: np.ndarray,
    x: np.ndarray,
    noise: np.ndarray,
    t: np.ndarray,
    process: ProcessSpec = FLOW_MATCHING,
    target: TargetSpec | float = 1.0,
    loss: LossTargetSpec = U_LOSS,
    clamp_floor: float | None = None,
) -> np.ndarray:
    """Batch estimate of the descent direction from samples (x, noise, t).

    Unbiased for ``exact_gradient`` when t is drawn from the measure the
    moments were computed with.
    """
    if isinstance(target, (int, float)):
        target = k_target(float(target))
    weight = np.asarray(weight, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    a = np.asarray(process.alpha(t), dtype=np.float64)[:, None]
    s = np.asarray(process.sigma(t), dtype=np.float64)[:, None]
    p = np.asarray(target.phi(t), dtype=np.float64)[:, None]
    q = np.asarray(target.psi(t), dtype=np.float64)[:, None]
    kap = np.asarray(make_kappa(process, target, loss, clamp_floor)(t), dtype=np.float64)
    z = a * x + s * noise
    u = p * x + q * noise
    resid = (kap * kap)[:, None] * (z @ weight.T - u)
    return -(resid.T @ z) / len(t)


def quadratic_loss(weight: np.ndarray, basis: ManifoldBasis, moments: MomentSet) -> float:
    """Exact training loss of an arbitrary weight (quadratic in the weight)."""
    weight = np.asarray(weight, dtype=np.float64)
    proj = basis.projector()
    wp = weight @ proj
    d = basis.intrinsic_dim
    ambient = basis.ambient_dim
    return 0.5 * (
        moments.alpha_sq * float(np.sum(wp * weight))
        + moments.sigma_sq * float(np.sum(weight * weight))
        - 2.0 * (moments.phi_alpha * float(np.trace(wp)) + moments.psi_sigma * float(np.trace(weight)))
        + moments.phi_sq * d
        + moments.psi_sq * ambient
    )


def stability_bound(moments: MomentSet) -> float:
    """Largest stable explicit-Euler step for the exact dynamics."""
    return 2.0 / (moments.alpha_sq + moments.sigma_sq)


def _log_steps(total: int) -> set[int]:
    # every step up to 1e3, then logarithmically spaced
    if total <= 1000:
        return set(range(total + 1))
    pts = np.unique(np.geomspace(1, total, 1000).astype(int))
    return {0, total} | set(int(p) for p in pts)


def run_gradient_flow(
    weight0: np.ndarray,
    basis: ManifoldBasis,
    config: FlowConfig,
    process: ProcessSpec = FLOW_MATCHING,
    target: TargetSpec | float = 1.0,
    loss: LossTargetSpec = U_LOSS,
    measure: TimeMeasure = UNIFORM_MEASURE,
    quad_nodes: int = 64,
    rng: np.random.Generator | None = None,
) -> list[FlowRecord]:
    """Integrate the training dynamics with explicit Euler steps.

    In exact mode the two modes are evolved by their own decoupled
    recursions, so the perpendicular trajectory depends only on the noise
    coefficient of the target and is bit-identical across runs that differ
    only in the data coefficient.  Distances to equilibrium then contract
    geometrically with per-step factors 1 - step*(alpha_sq + sigma_sq)
    (parallel) and 1 - step*sigma_sq (perpendicular).

    Raises Divergence if the exact-mode loss increases for 10 consecutive
    steps.
    """
    if isinstance(target, (int, float)):
        target = k_target(float(target))
    moments = compute_moments(process, target, loss, measure, quad_nodes=quad_nodes)
    if config.mode == "exact" and config.step_size >= stability_bound(moments):
        warnings.warn(
            f"step_size {config.step_size} at or above stability bound "
            f"{stability_bound(moments):.6g}; exact dynamics will diverge",
            stacklevel=2,
        )
    if config.mode == "stochastic" and rng is None:
        raise ValueError("stochastic mode needs an rng")

    proj = basis.projector()
    eye = np.eye(basis.ambient_dim)
    c_par, c_perp = optimal_weight_coeffs(moments)
    w_star_par = c_par * proj
    w_star_perp = c_perp * (eye - proj)

    modes = decompose(np.asarray(weight0, dtype=np.float64), basis)
    w_par, w_perp = modes.parallel.copy(), modes.perpendicular.copy()

    def record(step: int) -> FlowRecord:
        return FlowRecord(
            step=step,
            weight_par=w_par.copy(),
            weight_perp=w_perp.copy(),
            loss=quadratic_loss(w_par + w_perp, basis, moments),
            dist_par=float(np.linalg.norm(w_par - w_star_par)),
            dist_perp=float(np.linalg.norm(w_perp - w_star_perp)),
        )

    keep = _log_steps(config.steps)
    trajectory = [record(0)]
    step = config.step_size
    decay_par = 1.0 - step * (moments.alpha_sq + moments.sigma_sq)
    drive_par = step * (moments.phi_alpha + moments.psi_sigma)
    decay_perp = 1.0 - step * moments.sigma_sq
    drive_perp = step * moments.psi_sigma
    prev_loss = trajectory[0].loss
    rising = 0
    for i in range(1, config.steps + 1):
        if config.mode == "exact":
            w_par = decay_par * w_par + drive_par * proj
            w_perp = decay_perp * w_perp + drive_perp * (eye - proj)
        else:
            x = sample_data(basis, config.batch, rng)
            noise = sample_noise(basis.ambient_dim, config.batch, rng)
            t = sample_t(measure, rng, size=config.batch)
            grad = stochastic_gradient(w_par + w_perp, x, noise, t, process, target, loss)
            modes = decompose(w_par + w_perp + step * grad, basis)
            w_par, w_perp = modes.parallel, modes.perpendicular
        if config.mode == "exact":
            cur_loss = quadratic_loss(w_par + w_perp, basis, moments)
            if cur_loss > prev_loss:
                rising += 1
                if rising >= 10:
                    raise Divergence(
                        f"loss increased for {rising} consecutive steps "
                        f"(step {i}, loss {cur_loss:.6g})"
                    )
            else:
                rising = 0
            prev_loss = cur_loss
        if i in keep:
            trajectory.append(record(i))
    return trajectory


def monte_carlo_loss(
    weight: np.ndarray,
    basis: ManifoldBasis,
    target: TargetSpec | float,
    n_samples: int,
    rng: np.random.Generator,
    process: ProcessSpec = FLOW_MATCHING,
    loss: LossTargetSpec = U_LOSS,
    measure: TimeMeasure = UNIFORM_MEASURE,
    clamp_floor: float | None = None,
    antithetic: bool = True,
    chunk: int = 1 << 15,
) -> tuple[float, float]:
    """Monte Carlo estimate of the training loss with its standard error.

    Samples are assembled as antithetic noise pairs (n, -n) sharing data and
    time, which lowers variance without biasing the estimate; each pair mean
    counts as one observation for the standard error.  Chunks are reduced in
    a fixed order, so the result is reproducible for a given generator state.
    """
    if isinstance(target, (int, float)):
        target = k_target(float(target))
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    weight = np.asarray(weight, dtype=np.float64)
    kappa_fn = make_kappa(process, target, loss, clamp_floor)
    n_groups = n_samples // 2 if antithetic else n_samples
    values = np.empty(n_groups)
    done = 0
    while done < n_groups:
        m = min(chunk, n_groups - done)
        t = sample_t(measure, rng, size=m)
        x = sample_data(basis, m, rng)
        noise = sample_noise(basis.ambient_dim, m, rng)
        a = np.asarray(process.alpha(t), dtype=np.float64)[:, None]
        s = np.asarray(process.sigma(t), dtype=np.float64)[:, None]
        p = np.asarray(target.phi(t), dtype=np.float64)[:, None]
        q = np.asarray(target.psi(t), dtype=np.float64)[:, None]
        kap2 = np.asarray(kappa_fn(t), dtype=np.float64) ** 2
        resid_plus = (a * x + s * noise) @ weight.T - (p * x + q * noise)
        half = 0.5 * kap2 * np.einsum("ij,ij->i", resid_plus, resid_plus)
        if antithetic:
            resid_minus = (a * x - s * noise) @ weight.T - (p * x - q * noise)
            half_minus = 0.5 * kap2 * np.einsum("ij,ij->i", resid_minus, resid_minus)
            values[done : done + m] = 0.5 * (half + half_minus)
        else:
            values[done : done + m] = half
        done += m
    estimate = float(np.mean(values))
    std_error = float(np.std(values, ddof=1) / math.sqrt(n_groups))
    return estimate, std_error
