"""Target motion/measurement models, joint-density factors and the prediction step."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import poisson

from .ggiw import (
    GammaParams,
    GaussianParams,
    GgiwParams,
    IWParams,
    SingularCovarianceError,
    clamp_dof,
    symmetrize,
)

LEGACY = "legacy"
NEW = "new"


class SingularInnovationError(SingularCovarianceError):
    """Innovation covariance sE + R is singular."""


@dataclass(frozen=True)
class MotionModel:
    """Linear Gaussian kinematics plus forgetting factors for rate and extent.

    F, Q: transition matrix and process-noise covariance; T: sampling period [s];
    survival_prob: per-step survival probability; rate_forget (eta >= 1) divides
    the gamma shape/rate; extent_forget (tau > 0) sets the dof decay exp(-T/tau).
    """

    F: np.ndarray
    Q: np.ndarray
    T: float
    survival_prob: float
    rate_forget: float
    extent_forget: float

    def __post_init__(self):
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        if not np.allclose(self.Q, self.Q.T, atol=1e-9 * max(np.abs(self.Q).max(), 1.0)):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-9 * max(np.trace(self.Q), 1.0):
            raise ValueError("Q must be positive semidefinite")
        if not 0.0 < self.survival_prob <= 1.0:
            raise ValueError("survival probability must be in (0, 1]")
        if self.rate_forget < 1.0:
            raise ValueError("rate forgetting factor must be >= 1")
        if self.extent_forget <= 0.0:
            raise ValueError("extent forgetting time constant must be positive")


@dataclass(frozen=True)
class SensorModel:
    """Observation model z = H xi + noise with innovation covariance s E + R.

    clutter_rate is the expected clutter count per scan; clutter_density is
    clutter_rate / region_area (uniform clutter over the surveillance region).
    """

    H: np.ndarray
    R: np.ndarray
    s: float
    p_detect: float
    clutter_rate: float
    region_area: float

    def __post_init__(self):
        object.__setattr__(self, "H", np.asarray(self.H, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        if not 0.0 < self.p_detect <= 1.0:
            raise ValueError("detection probability must be in (0, 1]")
        if self.clutter_rate < 0.0 or self.region_area <= 0.0:
            raise ValueError("clutter rate must be >= 0 and region area > 0")
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise ValueError("R must be positive definite")

    @property
    def dim_z(self) -> int:
        return self.H.shape[0]

    @property
    def dim_x(self) -> int:
        return self.H.shape[1]

    @property
    def clutter_density(self) -> float:
        return self.clutter_rate / self.region_area


@dataclass(frozen=True)
class Track:
    """A potential target: existence probabilities and a GGIW state density.

    The nonexistence branch carries an arbitrary dummy density that integrates
    to one; it is never evaluated, so only (p0, p1) represent it.
    """

    id: int
    kind: str
    p0: float
    p1: float
    state: GgiwParams

    def __post_init__(self):
        if self.kind not in (LEGACY, NEW):
            raise ValueError("kind must be 'legacy' or 'new'")
        if self.p1 < 0.0 or abs(self.p0 + self.p1 - 1.0) > 1e-9:
            raise ValueError("existence probabilities must be nonnegative and sum to 1")


def predict(t: Track, m: MotionModel) -> Track:
    """One-step prediction of existence, rate, kinematics and extent.

    The forgetting forms keep E[gamma] = alpha/beta and V/(nu-d-1) unchanged
    while inflating the spread: alpha,beta divide by eta, and the extent dof
    decays toward 2d+2 with constant tau.
    """
    p1 = m.survival_prob * t.p1
    rate = GammaParams(t.state.rate.alpha / m.rate_forget, t.state.rate.beta / m.rate_forget)
    kin = GaussianParams(
        mean=m.F @ t.state.kin.mean,
        cov=symmetrize(m.F @ t.state.kin.cov @ m.F.T + m.Q),
    )
    d = t.state.ext.dim
    lam = math.exp(-m.T / m.extent_forget)
    nu = 2 * d + 2 + lam * (t.state.ext.dof - 2 * d - 2)
    nu = clamp_dof(nu, d)
    scale = symmetrize((nu - d - 1) / (t.state.ext.dof - d - 1) * t.state.ext.scale)
    ext = IWParams(nu, scale)
    return replace(t, p0=1.0 - p1, p1=p1, state=GgiwParams(rate, kin, ext))


def truncated_poisson_cap(g: GammaParams, tol: float) -> tuple[int, float]:
    """Smallest cap ell with Poisson(E[gamma]) tail mass beyond ell <= tol.

    Returns (ell, c_gamma) where c_gamma = 1 / P(X <= ell) renormalizes the
    truncated distribution.  The cap is floored at 1 so the association
    machinery stays defined for near-zero rates.
    """
    if not 0.0 < tol < 1.0:
        raise ValueError("tolerance must be in (0, 1)")
    lam = g.alpha / g.beta
    ell = int(poisson.ppf(1.0 - tol, lam))
    # ppf gives the smallest k with CDF >= 1-tol, i.e. tail beyond k <= tol; make
    # it minimal against ties and floor at 1.
    while ell > 0 and poisson.sf(ell - 1, lam) <= tol:
        ell -= 1
    ell = max(ell, 1)
    return ell, 1.0 / poisson.cdf(ell, lam)


def likelihood_ratio(z, kin_point, extent, sensor: SensorModel) -> float:
    """Point-state likelihood ratio N(z; H xi, sE + R) / kappa_c.

    The dummy association (value 0) corresponds to ratio 1 and is not evaluated
    here.  Used by the enumeration oracle; the filter itself uses expectations.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    xi = np.asarray(kin_point, dtype=float).reshape(-1)
    cov = sensor.s * np.asarray(extent, dtype=float) + sensor.R
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise SingularInnovationError("innovation covariance not positive definite")
    r = z - sensor.H @ xi
    quad = float(r @ np.linalg.solve(cov, r))
    d = z.size
    return math.exp(-0.5 * (d * math.log(2.0 * math.pi) + logdet + quad)) / sensor.clutter_density


def detection_factor_legacy(
    r: int, gamma: float, a_count: int, cap: int, c_gamma: float, p_detect: float
) -> float:
    """Legacy-track detection factor h as a function of the association count."""
    if not 0 <= a_count <= cap:
        raise ValueError("association count outside [0, cap]")
    if r == 0:
        return 1.0 if a_count == 0 else 0.0
    if a_count > 0:
        return (
            c_gamma
            * p_detect
            * gamma**a_count
            * math.exp(-gamma)
            * math.factorial(cap - a_count)
            / math.factorial(cap)
        )
    return c_gamma * (1.0 - p_detect + p_detect * math.exp(-gamma))


def detection_factor_new(
    r: int, gamma: float, a_count: int, cap: int, c_gamma: float, p_detect: float
) -> float:
    """New-track detection factor; conditioned on the track having been detected."""
    if not 0 <= a_count <= cap:
        raise ValueError("association count outside [0, cap]")
    if r == 0:
        return 1.0 if a_count == 0 else 0.0
    denom = 1.0 - p_detect + p_detect * math.exp(-gamma)
    return (
        c_gamma
        * p_detect
        * gamma**a_count
        * math.exp(-gamma)
        * math.factorial(cap - a_count)
        / (denom * math.factorial(cap))
    )


def consistency(a_value: int, b_value: tuple[int, int], track: int, slot: int, meas: int) -> int:
    """Pairwise indicator between a target-oriented entry and a measurement vector.

    a_value is the slot's claim; b_value is (track index, slot) or (0, 0) for
    clutter.  Zero iff exactly one side claims the (track, slot, meas) triple.
    """
    claims = a_value == meas
    assigned = b_value == (track, slot)
    return 0 if claims != assigned else 1
