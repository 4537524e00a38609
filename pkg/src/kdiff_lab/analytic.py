"""Closed-form and quadrature evaluation of equilibrium weights and optimal losses.

Everything in this module is a pure function of immutable inputs, so k-grid
sweeps can be evaluated in parallel without coordination.

The central objects are time integrals against the effective measure
(sampling density times kappa^2).  With those moments in hand, the optimal
single-linear-layer weight splits into a coefficient on the manifold
projector and one on its complement, and the loss at that optimum splits into
an intra-manifold part proportional to the intrinsic dimension d and a
residual part proportional to the codimension D - d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import QuadratureDivergence, SingularEquilibrium
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
)

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DimensionPair:
    """Ambient dimension D and intrinsic dimension d of the data manifold."""

    ambient: int
    intrinsic: int

    def __post_init__(self):
        if self.intrinsic < 1:
            raise ValueError(f"intrinsic dimension must be >= 1, got {self.intrinsic}")
        if self.ambient < self.intrinsic:
            raise ValueError(
                f"ambient dimension {self.ambient} smaller than intrinsic {self.intrinsic}"
            )


@dataclass(frozen=True)
class MomentSet:
    """Scalar integrals of schedule-coefficient products against the effective measure.

    ``one`` is the total effective mass; the remaining fields integrate the
    named coefficient products, e.g. ``alpha_sq`` is the integral of
    weight(t) * alpha(t)^2 with weight = density * kappa^2.
    """

    one: float
    alpha: float
    sigma: float
    alpha_sq: float
    sigma_sq: float
    alpha_sigma: float
    phi_alpha: float
    psi_sigma: float
    phi_sq: float
    psi_sq: float


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues (and optionally eigenvectors) of the data second moment."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        object.__setattr__(self, "eigenvalues", lam)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a non-empty 1-d array")
        if np.any(lam < 0.0):
            raise ValueError("eigenvalues must be non-negative")
        if self.eigenvectors is not None:
            q = np.asarray(self.eigenvectors, dtype=np.float64)
            object.__setattr__(self, "eigenvectors", q)
            if q.shape != (lam.size, lam.size):
                raise ValueError(f"eigenvectors must be {lam.size}x{lam.size}, got {q.shape}")
            ortho_err = np.max(np.abs(q.T @ q - np.eye(lam.size)))
            if ortho_err > 1e-10:
                raise ValueError(f"eigenvectors not orthonormal (max |Q^T Q - I| = {ortho_err:.2e})")

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))


@dataclass(frozen=True)
class OptimalLoss:
    """Loss at the equilibrium weight, split by mode."""

    total: float
    parallel: float
    perpendicular: float


@dataclass(frozen=True)
class ColoredLoss:
    """Equilibrium loss for colored data, with per-eigenmode contributions."""

    total: float
    per_mode: np.ndarray


def gauss_legendre_nodes(interval: tuple[float, float], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights rescaled to the interval."""
    if n < 2:
        raise ValueError(f"need at least 2 quadrature nodes, got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    lo, hi = interval
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def compute_moments(
    process: ProcessSpec,
    target: TargetSpec,
    loss: LossTargetSpec,
    measure: TimeMeasure,
    quad_nodes: int = 64,
    clamp_floor: float | None = None,
) -> MomentSet:
    """Integrate the moment set by Gauss-Legendre quadrature.

    64 nodes are exact for the polynomial integrands of the flow-matching /
    uniform case and spectrally accurate for smooth non-polynomial measures
    such as the logit-normal; raise quad_nodes for tighter tolerances there.

    The weight (density times kappa^2) must be integrable on the interval:
    a loss/target pairing whose conversion denominator vanishes at an
    endpoint (say, the noise-prediction target under the velocity loss)
    diverges there, and nodes-are-interior quadrature cannot flag that.
    """
    t, wq = gauss_legendre_nodes(measure.interval, quad_nodes)
    kap = np.asarray(make_kappa(process, target, loss, clamp_floor)(t), dtype=np.float64)
    weight = wq * measure.density(t) * kap * kap
    a = np.asarray(process.alpha(t), dtype=np.float64)
    s = np.asarray(process.sigma(t), dtype=np.float64)
    p = np.asarray(target.phi(t), dtype=np.float64)
    q = np.asarray(target.psi(t), dtype=np.float64)
    integrands = {
        "one": np.ones_like(t),
        "alpha": a,
        "sigma": s,
        "alpha_sq": a * a,
        "sigma_sq": s * s,
        "alpha_sigma": a * s,
        "phi_alpha": p * a,
        "psi_sigma": q * s,
        "phi_sq": p * p,
        "psi_sq": q * q,
    }
    values = {}
    for name, f in integrands.items():
        fw = weight * f
        if not np.all(np.isfinite(fw)):
            raise QuadratureDivergence(f"non-finite integrand for moment {name!r}")
        values[name] = float(np.sum(fw))
    return MomentSet(**values)


def optimal_weight_coeffs(moments: MomentSet) -> tuple[float, float]:
    """Equilibrium coefficients (c_par, c_perp) of the optimal linear weight.

    The optimal weight is c_par on the manifold projector plus c_perp on its
    orthogonal complement.
    """
    den_par = moments.alpha_sq + moments.sigma_sq
    den_perp = moments.sigma_sq
    if den_par <= 0.0 or den_perp <= 0.0:
        raise SingularEquilibrium(
            f"equilibrium denominators must be positive (parallel {den_par:.3e}, "
            f"perpendicular {den_perp:.3e})"
        )
    c_par = (moments.phi_alpha + moments.psi_sigma) / den_par
    c_perp = moments.psi_sigma / den_perp
    return c_par, c_perp


def optimal_loss(moments: MomentSet, dims: DimensionPair) -> OptimalLoss:
    """Loss at the equilibrium weight, split into parallel and perpendicular parts.

    Both parts are non-negative (Cauchy-Schwarz) up to roundoff.
    """
    den_par = moments.alpha_sq + moments.sigma_sq
    den_perp = moments.sigma_sq
    if den_par <= 0.0 or den_perp <= 0.0:
        raise SingularEquilibrium(
            f"equilibrium denominators must be positive (parallel {den_par:.3e}, "
            f"perpendicular {den_perp:.3e})"
        )
    d = dims.intrinsic
    codim = dims.ambient - dims.intrinsic
    parallel = 0.5 * d * (
        moments.phi_sq + moments.psi_sq - (moments.phi_alpha + moments.psi_sigma) ** 2 / den_par
    )
    perpendicular = 0.5 * codim * (moments.psi_sq - moments.psi_sigma**2 / den_perp)
    return OptimalLoss(parallel + perpendicular, parallel, perpendicular)


def optimal_loss_poly(k, dims: DimensionPair):
    """Closed-form equilibrium loss for the k-target under flow matching,
    uniform time sampling and unit loss weighting:

        (1/16) * (2 (D + d) k^2 - 4 D k + 2 D + 3 d)
    """
    kk = np.asarray(k, dtype=np.float64)
    dd, d = dims.ambient, dims.intrinsic
    out = (2.0 * (dd + d) * kk * kk - 4.0 * dd * kk + (2.0 * dd + 3.0 * d)) / 16.0
    if np.ndim(k) == 0:
        return float(out)
    return out


def optimal_k(dims: DimensionPair) -> float:
    """Minimiser of the closed-form loss over k: D / (D + d)."""
    return dims.ambient / (dims.ambient + dims.intrinsic)


def argmin_k(loss_fn, tol: float = 1e-8) -> float:
    """Golden-section minimiser of a unimodal function on [0, 1].

    On exact ties both ends shrink, so a constant function converges to the
    midpoint.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    a, b = 0.0, 1.0
    while b - a > tol:
        span = b - a
        x1 = b - _GOLDEN * span
        x2 = a + _GOLDEN * span
        f1, f2 = loss_fn(x1), loss_fn(x2)
        if f1 < f2:
            b = x2
        elif f1 > f2:
            a = x1
        else:
            a, b = x1, x2
    return 0.5 * (a + b)


def colored_mode_coefficients(eigenvalues, moments: MomentSet) -> np.ndarray:
    """Per-eigenmode equilibrium coefficients for colored data.

    Mode i with eigenvalue lam: (lam * phi_alpha + psi_sigma) / (lam * alpha_sq + sigma_sq).
    A unit eigenvalue reproduces c_par and a zero eigenvalue c_perp.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    den = lam * moments.alpha_sq + moments.sigma_sq
    if np.any(den <= 0.0):
        raise SingularEquilibrium(
            f"per-mode denominator not positive (min {np.min(den):.3e})"
        )
    return (lam * moments.phi_alpha + moments.psi_sigma) / den


def colored_optimal_weight(spectrum: Spectrum, moments: MomentSet) -> np.ndarray:
    """Optimal weight matrix for colored data: sum of per-mode rank-1 terms.

    Requires explicit eigenvectors; the result is symmetric and commutes with
    the data second moment.
    """
    if spectrum.eigenvectors is None:
        raise ValueError("colored_optimal_weight requires eigenvectors")
    coeffs = colored_mode_coefficients(spectrum.eigenvalues, moments)
    q = spectrum.eigenvectors
    return (q * coeffs) @ q.T


def colored_mode_losses(eigenvalues, moments: MomentSet) -> np.ndarray:
    """Per-eigenmode equilibrium loss contributions for colored data."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    den = lam * moments.alpha_sq + moments.sigma_sq
    if np.any(den <= 0.0):
        raise SingularEquilibrium(
            f"per-mode denominator not positive (min {np.min(den):.3e})"
        )
    num = lam * moments.phi_alpha + moments.psi_sigma
    return 0.5 * (lam * moments.phi_sq + moments.psi_sq - num * num / den)


def colored_optimal_loss(
    spectrum: Spectrum,
    k: float,
    process: ProcessSpec = FLOW_MATCHING,
    loss: LossTargetSpec = U_LOSS,
    measure: TimeMeasure = UNIFORM_MEASURE,
    quad_nodes: int = 64,
) -> ColoredLoss:
    """Equilibrium loss of the k-target on colored data, summed over eigenmodes."""
    moments = compute_moments(process, k_target(k), loss, measure, quad_nodes=quad_nodes)
    per_mode = colored_mode_losses(spectrum.eigenvalues, moments)
    return ColoredLoss(float(np.sum(per_mode)), per_mode)


def colored_optimal_k(spectrum: Spectrum) -> float:
    """Minimiser of the colored-data loss over k: D / (D + trace).

    Holds for flow matching with uniform time sampling and unit loss
    weighting; a binary 0/1 spectrum reduces it to D / (D + d), and an
    all-zero spectrum gives pure data prediction, k = 1.
    """
    return spectrum.dim / (spectrum.dim + spectrum.trace)
