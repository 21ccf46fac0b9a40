"""Gamma / Gaussian / inverse-Wishart building blocks for the nested target density.

A single extended target carries a measurement-rate gamma density, a Gaussian
kinematic density and an inverse-Wishart extent density.  The inverse Wishart
uses the random-matrix community convention: IW(E; nu, V) has density
proportional to |E|^(-nu/2) exp(-tr(V E^-1)/2), i.e. scipy's invwishart with
df = nu - d - 1 and scale V.  Under this convention E[E^-1] = (nu-d-1) V^-1
and E[ln|E|] = ln|V| - d ln 2 - sum_i psi((nu-d-i)/2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

log = logging.getLogger(__name__)

# Relative symmetry tolerance and eigenvalue floor for covariance-like inputs.
_SYM_RTOL = 1e-9

MIN_DOF_MARGIN = 1e-6


class DegenerateDofError(ValueError):
    """Inverse-Wishart dof too small for the requested expectation."""


class EmptyMixtureError(ValueError):
    """Mixture operation received no components."""


class NonNormalizedWeightsError(ValueError):
    """Mixture weights are negative or do not sum to one."""


class SingularCovarianceError(np.linalg.LinAlgError):
    """Covariance (or innovation) matrix is not invertible."""


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T)/2 to control floating-point drift after updates."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _check_symmetric_psd(a: np.ndarray, name: str, definite: bool = False) -> None:
    scale = max(np.abs(a).max(), 1.0)
    if not np.allclose(a, a.T, rtol=0.0, atol=_SYM_RTOL * scale):
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(a)
    floor = -_SYM_RTOL * max(np.trace(a), 0.0) if not definite else 0.0
    if w.min() < floor or (definite and w.min() <= 0.0):
        raise ValueError(f"{name} must be positive {'definite' if definite else 'semidefinite'}")


@dataclass(frozen=True)
class GammaParams:
    """Measurement-rate density G(gamma; alpha, beta) with shape alpha and rate beta."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and np.isfinite(self.alpha)):
            raise ValueError("gamma shape must be positive")
        if not (self.beta > 0.0 and np.isfinite(self.beta)):
            raise ValueError("gamma rate must be positive")


@dataclass(frozen=True)
class GaussianParams:
    """Kinematic density N(xi; mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match the mean")
        _check_symmetric_psd(self.cov, "cov")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class IWParams:
    """Extent density IW(E; dof, scale); requires dof > d + 1 so E[E^-1] exists."""

    dof: float
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        d = self.scale.shape[0]
        if self.scale.shape != (d, d):
            raise ValueError("scale must be square")
        _check_symmetric_psd(self.scale, "scale", definite=True)
        if not self.dof > d + 1:
            raise DegenerateDofError(f"dof must exceed d+1={d + 1}, got {self.dof}")

    @property
    def dim(self) -> int:
        return self.scale.shape[0]


@dataclass(frozen=True)
class GgiwParams:
    """Joint single-target parameter set (rate, kinematics, extent)."""

    rate: GammaParams
    kin: GaussianParams
    ext: IWParams

    def __post_init__(self):
        if self.ext.dim > self.kin.dim:
            raise ValueError("extent dimension exceeds kinematic dimension")


def gamma_mean(g: GammaParams) -> float:
    """Mean alpha/beta of the rate density."""
    return g.alpha / g.beta


def gamma_variance(g: GammaParams) -> float:
    return g.alpha / (g.beta * g.beta)


def clamp_dof(dof: float, dim: int) -> float:
    """Floor the IW dof at d+1 (plus margin) so expectations stay defined."""
    lo = dim + 1 + MIN_DOF_MARGIN
    if dof < lo:
        log.warning("clamping inverse-Wishart dof %.6g to %.6g", dof, lo)
        return lo
    return dof


def expected_inv_extent(e: IWParams, s: float = 1.0) -> np.ndarray:
    """E[(sE)^-1] = (nu - d - 1) V^-1 / s for the scaled extent sE."""
    d = e.dim
    if e.dof - d - 1 <= 0.0:
        raise DegenerateDofError("dof too small for E[E^-1]")
    return (e.dof - d - 1) * np.linalg.inv(e.scale) / s


def expected_log_det_extent(e: IWParams, s: float = 1.0) -> float:
    """E[ln|sE|] = d ln s - d ln 2 + ln|V| - sum_i psi((nu - d - i)/2)."""
    d = e.dim
    if e.dof - d - 1 <= 0.0:
        raise DegenerateDofError("dof too small for E[ln|E|]")
    sign, logdet = np.linalg.slogdet(e.scale)
    if sign <= 0:
        raise SingularCovarianceError("scale matrix not positive definite")
    i = np.arange(1, d + 1)
    return d * np.log(s) - d * np.log(2.0) + logdet - digamma((e.dof - d - i) / 2.0).sum()


def extent_mean(e: IWParams) -> np.ndarray:
    """Point estimate V/(nu - d - 1); the quantity the filter preserves and reports."""
    return e.scale / (e.dof - e.dim - 1)


def merge_gamma_mixture(weights, comps) -> GammaParams:
    """Collapse a gamma mixture to a single gamma matching its first two moments."""
    w = np.asarray(weights, dtype=float)
    comps = list(comps)
    if len(comps) == 0:
        raise EmptyMixtureError("no mixture components")
    if w.shape != (len(comps),):
        raise NonNormalizedWeightsError("weights/components length mismatch")
    if w.min() < 0.0 or abs(w.sum() - 1.0) > 1e-9:
        raise NonNormalizedWeightsError("weights must be nonnegative and sum to 1")
    means = np.array([c.alpha / c.beta for c in comps])
    second = np.array([c.alpha * (c.alpha + 1) / (c.beta * c.beta) for c in comps])
    mean = float(w @ means)
    var = float(w @ second) - mean * mean
    if var <= 0.0:
        # Degenerate only when all components coincide; fall back to that component.
        return GammaParams(comps[0].alpha, comps[0].beta)
    return GammaParams(alpha=mean * mean / var, beta=mean / var)


def gaussian_log_pdf(x, g: GaussianParams) -> float:
    """Multivariate Gaussian log-density ln N(x; mean, cov)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != g.dim:
        raise ValueError("dimension mismatch")
    sign, logdet = np.linalg.slogdet(g.cov)
    if sign <= 0:
        raise SingularCovarianceError("covariance not positive definite")
    r = x - g.mean
    try:
        sol = np.linalg.solve(g.cov, r)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(str(exc)) from exc
    return float(-0.5 * (g.dim * np.log(2.0 * np.pi) + logdet + r @ sol))
