"""Mean-field side of the filter: state/association messages, coordinate-ascent
posteriors for kinematics and extent, measurement-rate posteriors, the
predictive likelihood, and the per-track existence updates.

The per-track posterior solves, by coordinate ascent, the factorized
approximation of prior(xi) prior(E) prod_m N(z_m; H xi, sE + R)^omega_m after
introducing one Gaussian "source" variable per weighted measurement.  Each
ascent step is the exact optimizer of one factor given the other two, so the
evidence lower bound is nondecreasing along the trace.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, multigammaln

from .ggiw import (
    GammaParams,
    GaussianParams,
    GgiwParams,
    IWParams,
    clamp_dof,
    gaussian_log_pdf,
    merge_gamma_mixture,
    symmetrize,
)
from .models import LEGACY, NEW, SensorModel, Track

log = logging.getLogger(__name__)

OMEGA_FLOOR = 1e-8


@dataclass(frozen=True)
class MfMessages:
    """State-to-association evidence rows.

    legacy: (N, M+1), column 0 is the dummy value (always 1).  new: (K, M),
    row k nonzero only from its anchor index on; the dummy value is 0.
    """

    legacy: np.ndarray
    new: np.ndarray


@dataclass(frozen=True)
class MfPosterior:
    """Converged factors of one track's state posterior.

    src_means/src_covs parameterize the per-measurement source densities; z and
    omega record the (masked) measurements and weights actually used so the
    predictive likelihood can be evaluated consistently.
    """

    kin: GaussianParams
    ext: IWParams
    src_means: np.ndarray
    src_covs: np.ndarray
    z: np.ndarray
    omega: np.ndarray
    elbo_trace: np.ndarray


@dataclass(frozen=True)
class GammaPosterior:
    """Measurement-rate posterior mixture and its moment-matched merge.

    log_normalizer is ln of the unnormalized mixture mass including the
    truncation constant: for legacy tracks ln c_gamma(1 - p_D + sum_eps w_eps),
    for new tracks ln c_gamma(sum_eps w_eps); the caller adds the birth-rate
    and clutter-power factors when forming existence evidence.
    """

    weights: np.ndarray
    comps: tuple[GammaParams, ...]
    merged: GammaParams
    log_normalizer: float


def _log_evidence_row(state: GgiwParams, sensor: SensorModel, measurements: np.ndarray):
    """ln of exp(-E[f]/2) / (kappa_c (2 pi)^{d/2}) per measurement."""
    d = sensor.dim_z
    ext = state.ext
    i = np.arange(1, d + 1)
    sign, logdet_v = np.linalg.slogdet(ext.scale)
    e_logdet = (
        d * math.log(sensor.s)
        - d * math.log(2.0)
        + logdet_v
        - digamma((ext.dof - d - i) / 2.0).sum()
    )
    e_inv = (ext.dof - d - 1) * np.linalg.inv(ext.scale) / sensor.s
    hsh = sensor.H @ state.kin.cov @ sensor.H.T
    r = measurements - state.kin.mean @ sensor.H.T
    quad = np.einsum("mi,ij,mj->m", r, e_inv, r) + np.trace(hsh @ e_inv)
    return (
        -0.5 * (e_logdet + quad)
        - math.log(sensor.clutter_density)
        - 0.5 * d * math.log(2.0 * math.pi)
    )


def mf_state_to_assoc(
    track: Track,
    sensor: SensorModel,
    measurements: np.ndarray,
    birth_rate: float = 0.0,
    anchor: int = 0,
) -> np.ndarray:
    """Evidence row sent from a track's state factor to its association variables.

    Legacy tracks return shape (M+1,) with the dummy value 1 in slot 0; new
    tracks return shape (M,) scaled by the birth rate and zeroed below the
    anchor index.
    """
    measurements = np.asarray(measurements, dtype=float).reshape(-1, sensor.dim_z)
    m = measurements.shape[0]
    if m == 0:
        return np.ones(1) if track.kind == LEGACY else np.zeros(0)
    vals = np.exp(_log_evidence_row(track.state, sensor, measurements))
    if track.kind == LEGACY:
        return np.concatenate([[1.0], vals])
    row = birth_rate * vals
    row[:anchor] = 0.0
    return row


def gamma_posterior(
    prior: GammaParams,
    agg: float,
    cap: int,
    c_gamma: float,
    p_detect: float,
    kind: str = LEGACY,
) -> GammaPosterior:
    """Posterior rate mixture given the aggregated association evidence.

    Legacy: (1-p_D) on the prior plus detection components G(alpha+eps, beta+1)
    for eps = 0..cap.  New: detection components for eps = 1..cap only.
    """
    if agg < 0.0:
        raise ValueError("aggregated evidence must be nonnegative")
    a, b = prior.alpha, prior.beta
    log_agg = math.log(agg) if agg > 0.0 else -np.inf
    if kind == LEGACY:
        eps = np.arange(0, cap + 1, dtype=float)
    else:
        eps = np.arange(1, cap + 1, dtype=float)
        p_detect = min(p_detect, 1.0 - 1e-9)
    lg = a * math.log(b) - (eps + a) * math.log(b + 1.0) + gammaln(a + eps) - gammaln(a)
    with np.errstate(invalid="ignore"):
        pow_term = np.where((eps == 0) & np.isneginf(log_agg), 0.0, eps * log_agg)
    log_w = math.log(p_detect) + lg + pow_term - gammaln(eps + 1.0)
    if kind == NEW:
        log_w -= math.log1p(-p_detect)
        comps = [GammaParams(a + e, b + 1.0) for e in eps]
        log_total = logsumexp(log_w)
        weights = np.exp(log_w - log_total)
    else:
        log_miss = math.log1p(-p_detect) if p_detect < 1.0 else -np.inf
        log_total = logsumexp(np.concatenate([[log_miss], log_w]))
        weights = np.exp(np.concatenate([[log_miss], log_w]) - log_total)
        comps = [prior] + [GammaParams(a + e, b + 1.0) for e in eps]
    weights = weights / weights.sum()
    merged = merge_gamma_mixture(weights, comps)
    return GammaPosterior(weights, tuple(comps), merged, math.log(c_gamma) + float(log_total))


def _iw_entropy_terms(ext: IWParams):
    d = ext.dim
    i = np.arange(1, d + 1)
    sign, logdet = np.linalg.slogdet(ext.scale)
    e_log_det = logdet - d * math.log(2.0) - digamma((ext.dof - d - i) / 2.0).sum()
    e_inv = (ext.dof - d - 1) * np.linalg.inv(ext.scale)
    return e_log_det, e_inv


def _elbo_arrays(
    prior: GgiwParams,
    mean: np.ndarray,
    cov: np.ndarray,
    nu: float,
    v: np.ndarray,
    src_means: np.ndarray,
    src_covs: np.ndarray,
    z: np.ndarray,
    omega: np.ndarray,
    sensor: SensorModel,
) -> float:
    """Evidence lower bound of the source-augmented model at the given factors."""
    d = sensor.dim_z
    dx = mean.size
    ln2pi = math.log(2.0 * math.pi)
    i = np.arange(1, d + 1)
    sign, logdet_v1 = np.linalg.slogdet(v)
    e_log_det = logdet_v1 - d * math.log(2.0) - digamma((nu - d - i) / 2.0).sum()
    e_inv = (nu - d - 1) * np.linalg.inv(v)
    e_inv_s = e_inv / sensor.s
    r_inv = np.linalg.inv(sensor.R)
    sign, logdet_r = np.linalg.slogdet(sensor.R)

    dm = mean - prior.kin.mean
    p_cov_inv = np.linalg.inv(prior.kin.cov)
    sign, logdet_pcov = np.linalg.slogdet(prior.kin.cov)
    a1 = -0.5 * (
        dx * ln2pi
        + logdet_pcov
        + float(dm @ p_cov_inv @ dm)
        + float((p_cov_inv * cov).sum())
    )

    nu0, v0 = prior.ext.dof, prior.ext.scale
    sign, logdet_v0 = np.linalg.slogdet(v0)
    a2 = (
        0.5 * (nu0 - d - 1) * (logdet_v0 - d * math.log(2.0))
        - multigammaln(0.5 * (nu0 - d - 1), d)
        - 0.5 * nu0 * e_log_det
        - 0.5 * float((v0 * e_inv.T).sum())
    )

    hm = sensor.H @ mean
    hsh = sensor.H @ cov @ sensor.H.T
    logw = np.log(omega)
    rz = z - src_means
    tr_r = np.einsum("mi,ij,mj->m", rz, r_inv, rz) + np.einsum("ij,mji->m", r_inv, src_covs)
    a3 = float(
        np.sum(-0.5 * (d * ln2pi + logdet_r - d * logw) - 0.5 * omega * tr_r)
    )
    diff = src_means - hm
    tr_e = (
        np.einsum("ij,ji->", e_inv_s, hsh)
        + np.einsum("ij,mji->m", e_inv_s, src_covs)
        + np.einsum("mi,ij,mj->m", diff, e_inv_s, diff)
    )
    e_ln_se_r = d * math.log(sensor.s) + e_log_det  # ln|sE + R| in the small-R regime
    a4 = float(
        np.sum(
            0.5
            * (
                (1.0 - omega) * (d * ln2pi + e_ln_se_r)
                - d * ln2pi
                - d * logw
                - (d * math.log(sensor.s) - d * logw + e_log_det)
                - omega * tr_e
            )
        )
    )

    sign, logdet_cov = np.linalg.slogdet(cov)
    b1 = -0.5 * (dx * ln2pi + logdet_cov + dx)
    b2 = (
        0.5 * (nu - d - 1) * (logdet_v1 - d * math.log(2.0))
        - multigammaln(0.5 * (nu - d - 1), d)
        - 0.5 * nu * e_log_det
        - 0.5 * float((v * e_inv.T).sum())
    )
    b3 = float(np.sum(-0.5 * (d * ln2pi + np.linalg.slogdet(src_covs)[1] + d)))
    return (a1 + a2 + a3 + a4) - (b1 + b2 + b3)


def _elbo(
    prior: GgiwParams,
    kin: GaussianParams,
    ext: IWParams,
    src_means: np.ndarray,
    src_covs: np.ndarray,
    z: np.ndarray,
    omega: np.ndarray,
    sensor: SensorModel,
) -> float:
    return _elbo_arrays(
        prior, kin.mean, kin.cov, ext.dof, ext.scale, src_means, src_covs, z, omega, sensor
    )


def mf_fixed_point(
    prior: GgiwParams,
    measurements: np.ndarray,
    omega: np.ndarray,
    sensor: SensorModel,
    iters: int,
    tol: float = 1e-10,
) -> MfPosterior:
    """Coordinate-ascent posterior for one track given association weights.

    omega entries below 1e-8 are dropped.  With no effective measurements the
    prior is returned unchanged.  Each iteration updates kinematics, extent and
    sources in that order, each from the freshest values of the others.
    """
    d = sensor.dim_z
    z = np.asarray(measurements, dtype=float).reshape(-1, d)
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.size != z.shape[0]:
        raise ValueError("omega/measurement length mismatch")
    keep = omega > OMEGA_FLOOR
    z, omega = z[keep], omega[keep]
    big = omega.size and np.trace(sensor.R) > 0.1 * sensor.s * np.trace(
        prior.ext.scale / (prior.ext.dof - d - 1)
    )
    if big:
        log.warning("measurement noise not small against the scaled extent; "
                    "the extent-expectation approximations degrade")
    if omega.size == 0:
        return MfPosterior(
            kin=prior.kin,
            ext=prior.ext,
            src_means=np.zeros((0, d)),
            src_covs=np.zeros((0, d, d)),
            z=z[:0],
            omega=omega,
            elbo_trace=np.array([0.0]),
        )

    big_omega = float(omega.sum())
    p_cov_inv = np.linalg.inv(prior.kin.cov)
    r_inv = np.linalg.inv(sensor.R)
    h = sensor.H

    mean, cov = prior.kin.mean, prior.kin.cov
    nu = prior.ext.dof
    v = prior.ext.scale
    src_means = z.copy()
    src_covs = np.broadcast_to(
        sensor.s * prior.ext.scale / (prior.ext.dof - d - 1), (omega.size, d, d)
    ).copy()
    elbo = []
    prev = -np.inf
    for _ in range(iters):
        e_inv_s = (nu - d - 1) * np.linalg.inv(v) / sensor.s
        cov = symmetrize(np.linalg.inv(p_cov_inv + big_omega * h.T @ e_inv_s @ h))
        mean = cov @ (p_cov_inv @ prior.kin.mean + h.T @ e_inv_s @ (omega @ src_means))

        nu = clamp_dof(prior.ext.dof + big_omega, d)
        diff = src_means - h @ mean
        spread = (
            h @ cov @ h.T * big_omega
            + np.einsum("m,mij->ij", omega, src_covs)
            + np.einsum("m,mi,mj->ij", omega, diff, diff)
        )
        v = symmetrize(prior.ext.scale + spread / sensor.s)

        e_inv_s = (nu - d - 1) * np.linalg.inv(v) / sensor.s
        base_cov = symmetrize(np.linalg.inv(e_inv_s + r_inv))
        src_covs = base_cov[None, :, :] / omega[:, None, None]
        src_means = (base_cov @ ((e_inv_s @ (h @ mean))[:, None] + r_inv @ z.T)).T

        val = _elbo_arrays(prior, mean, cov, nu, v, src_means, src_covs, z, omega, sensor)
        elbo.append(val)
        if abs(val - prev) <= tol * max(abs(val), 1.0):
            break
        prev = val
    return MfPosterior(
        GaussianParams(mean, cov), IWParams(nu, v), src_means, src_covs, z, omega,
        np.array(elbo),
    )


def predictive_log_likelihood(
    prior: GgiwParams, post: MfPosterior, sensor: SensorModel
) -> float:
    """ln p(z) approximated by the evidence lower bound at the converged posterior.

    Closed form obtained by substituting the extent-update fixed-point
    identities into the bound, so it equals the general bound only once the
    coordinate iteration has converged.  The expected-log-determinant and
    trace terms cancel completely in the substitution; what remains involves
    only the converged parameters.
    """
    d = sensor.dim_z
    dx = post.kin.dim
    omega, z = post.omega, post.z
    m = omega.size
    if m == 0:
        return 0.0
    big_omega = float(omega.sum())
    r_inv = np.linalg.inv(sensor.R)
    sign, logdet_cov = np.linalg.slogdet(post.kin.cov)
    sign, logdet_v0 = np.linalg.slogdet(prior.ext.scale)
    sign, logdet_v1 = np.linalg.slogdet(post.ext.scale)
    nu0, nu1 = prior.ext.dof, post.ext.dof

    out = (
        gaussian_log_pdf(post.kin.mean, prior.kin)
        + 0.5 * (dx * math.log(2.0 * math.pi) + logdet_cov)
        + 0.5 * dx
        - 0.5 * float(np.trace(np.linalg.solve(prior.kin.cov, post.kin.cov)))
        + 0.5 * d * big_omega * (math.log(2.0) - math.log(2.0 * math.pi) - math.log(sensor.s))
        + 0.5 * (nu0 - d - 1) * logdet_v0
        - 0.5 * (nu1 - d - 1) * logdet_v1
        + multigammaln(0.5 * (nu1 - d - 1), d)
        - multigammaln(0.5 * (nu0 - d - 1), d)
        + 0.5 * m * d * (math.log(2.0 * math.pi) + 1.0)
    )
    out += 0.5 * float(np.linalg.slogdet(post.src_covs)[1].sum())
    out -= 0.5 * float(omega @ np.einsum("ij,mji->m", r_inv, post.src_covs))
    # ln N(z_m; src_mean_m, R / omega_m) batched over measurements
    rz = z - post.src_means
    sign, logdet_r = np.linalg.slogdet(sensor.R)
    quad = omega * np.einsum("mi,ij,mj->m", rz, r_inv, rz)
    out += float(
        np.sum(-0.5 * (d * math.log(2.0 * math.pi) + logdet_r - d * np.log(omega) + quad))
    )
    return float(out)


def _existence(log_odds: float) -> tuple[float, float]:
    if log_odds > 500.0:
        return 0.0, 1.0
    if log_odds < -500.0:
        return 1.0, 0.0
    p1 = 1.0 / (1.0 + math.exp(-log_odds))
    return 1.0 - p1, p1


def update_legacy(
    track: Track,
    post: MfPosterior,
    rate_post: GammaPosterior,
    log_pz: float,
    sensor: SensorModel,
) -> Track:
    """Posterior existence and state for a predicted legacy track."""
    big_omega = float(post.omega.sum())
    log_c = rate_post.log_normalizer - big_omega * math.log(sensor.clutter_density)
    if track.p1 <= 0.0:
        p0, p1 = 1.0, 0.0
    elif track.p0 <= 0.0:
        p0, p1 = 0.0, 1.0
    else:
        p0, p1 = _existence(math.log(track.p1) - math.log(track.p0) + log_c + log_pz)
    state = GgiwParams(rate_post.merged, post.kin, post.ext)
    return Track(id=track.id, kind=LEGACY, p0=p0, p1=p1, state=state)


def update_new(
    track: Track,
    post: MfPosterior,
    rate_post: GammaPosterior,
    log_pz: float,
    birth_rate: float,
    sensor: SensorModel,
    new_id: int,
) -> Track:
    """Posterior for a new track: evidence ratio against the unit nonexistence mass."""
    big_omega = float(post.omega.sum())
    log_lam = (
        math.log(birth_rate)
        + rate_post.log_normalizer
        - big_omega * math.log(sensor.clutter_density)
        + log_pz
    )
    p0, p1 = _existence(log_lam)
    state = GgiwParams(rate_post.merged, post.kin, post.ext)
    return Track(id=new_id, kind=LEGACY, p0=p0, p1=p1, state=state)
