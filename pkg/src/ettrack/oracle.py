"""Brute-force references for tiny association problems and 1-D evidence.

The enumeration walks every consistent joint assignment of all association
slots, with the state variables integrated out: point-mass kinematic/extent
states reduce the likelihood factors to fixed ratios, and the measurement-rate
integrals have closed forms.  New-track factors use the same effective model
as the message engine (detection denominator approximated by 1 - p_D, dummy
slots carrying unit weight, zero weight when an existing new track claims
nothing), so the engine and the oracle target the same joint density.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln
from scipy.stats import invgamma

from .ggiw import GaussianParams, IWParams


class BudgetExceededError(RuntimeError):
    """Enumeration space too large for the brute-force oracle."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


@dataclass(frozen=True)
class OracleLegacy:
    p1: float
    alpha: float
    beta: float
    cap: int
    c_gamma: float
    ratios: np.ndarray  # (M,) point-state likelihood ratios

    @property
    def p0(self) -> float:
        return 1.0 - self.p1


@dataclass(frozen=True)
class OracleNew:
    meas_idx: int
    alpha: float
    beta: float
    cap: int
    c_gamma: float
    ratios: np.ndarray  # (M,), ignored below meas_idx


@dataclass(frozen=True)
class TinyProblem:
    num_meas: int
    p_detect: float
    birth_rate: float
    legacy: tuple[OracleLegacy, ...]
    new: tuple[OracleNew, ...]


def _gamma_integral(alpha: float, beta: float, eps: int) -> float:
    """int gamma^eps exp(-gamma) G(gamma; alpha, beta) dgamma."""
    return math.exp(
        alpha * math.log(beta)
        - (eps + alpha) * math.log(beta + 1.0)
        + gammaln(alpha + eps)
        - gammaln(alpha)
    )


def _legacy_weight(e: OracleLegacy, assign: tuple[int, ...], p_detect: float) -> float:
    """Existence-marginalized weight of one legacy track's slot assignment.

    assign holds one value per slot: 0 for dummy or 1-based measurement index.
    """
    eps = sum(1 for a in assign if a > 0)
    if eps == 0:
        return e.p0 + e.p1 * e.c_gamma * (
            1.0 - p_detect + p_detect * _gamma_integral(e.alpha, e.beta, 0)
        )
    w = (
        e.p1
        * e.c_gamma
        * p_detect
        * _gamma_integral(e.alpha, e.beta, eps)
        * math.factorial(e.cap - eps)
        / math.factorial(e.cap)
    )
    for a in assign:
        if a > 0:
            w *= e.ratios[a - 1]
    return w


def _new_weight(
    e: OracleNew, assign: tuple[int, ...], p_detect: float, birth_rate: float
) -> float:
    eps = sum(1 for a in assign if a > 0)
    if eps == 0:
        return 1.0
    p_detect = min(p_detect, 1.0 - 1e-9)
    w = (
        birth_rate
        * e.c_gamma
        * p_detect
        / (1.0 - p_detect)
        * _gamma_integral(e.alpha, e.beta, eps)
        * math.factorial(e.cap - eps)
        / math.factorial(e.cap)
    )
    for a in assign:
        if a > 0:
            w *= e.ratios[a - 1]
    return w


def enumerate_marginals(p: TinyProblem, budget: int = 1_000_000):
    """Exact slot-0 association marginals by full enumeration.

    Returns (legacy, new): legacy has shape (N, M+1) with column 0 the dummy
    probability; new has shape (K, M) (dummy probability is identically zero
    whenever the track can claim anything, and mass 1 stays on the all-dummy
    branch internally).  Raises BudgetExceededError past `budget` joint
    configurations.
    """
    m = p.num_meas
    per_track: list[list[tuple[tuple[int, ...], float]]] = []
    for e in p.legacy:
        opts = []
        for assign in itertools.product(range(m + 1), repeat=e.cap):
            used = [a for a in assign if a > 0]
            if len(used) != len(set(used)):
                continue  # two slots of one track cannot share a measurement
            opts.append((assign, _legacy_weight(e, assign, p.p_detect)))
        per_track.append(opts)
    for e in p.new:
        vals = [0] + list(range(e.meas_idx + 1, m + 1))
        opts = []
        for assign in itertools.product(vals, repeat=e.cap):
            used = [a for a in assign if a > 0]
            if len(used) != len(set(used)):
                continue
            opts.append((assign, _new_weight(e, assign, p.p_detect, p.birth_rate)))
        per_track.append(opts)

    total_configs = math.prod(len(o) for o in per_track) if per_track else 0
    if total_configs > budget:
        raise BudgetExceededError(f"{total_configs} joint configurations exceed {budget}")

    n_legacy, n_new = len(p.legacy), len(p.new)
    legacy_marg = np.zeros((n_legacy, m + 1))
    new_marg = np.zeros((n_new, m + 1))
    total = 0.0
    for combo in itertools.product(*per_track):
        claimed: set[int] = set()
        weight = 1.0
        ok = True
        for assign, w in combo:
            for a in assign:
                if a > 0:
                    if a in claimed:
                        ok = False
                        break
                    claimed.add(a)
            if not ok or w == 0.0:
                ok = ok and w != 0.0
                break
            weight *= w
        if not ok or weight == 0.0:
            continue
        total += weight
        for i, (assign, _) in enumerate(combo):
            if i < n_legacy:
                legacy_marg[i, assign[0]] += weight
            else:
                new_marg[i - n_legacy, assign[0]] += weight
    if total <= 0.0:
        raise ValueError("problem has zero total mass")
    legacy_marg /= total
    new_marg /= total
    return legacy_marg, new_marg[:, 1:]


def evidence_quadrature(
    kin: GaussianParams,
    ext: IWParams,
    measurements: np.ndarray,
    omega: np.ndarray,
    s: float,
    r_var: float,
    rtol: float = 1e-8,
) -> float:
    """2-D adaptive quadrature of the scalar-state evidence.

    Computes int N(xi; mu, sigma^2) IW(E; nu, V) prod_m N(z_m; xi, sE+r)^w_m
    dxi dE for one-dimensional kinematics and extent.  Integration bounds come
    from extreme quantiles of the two priors and the measurement spread.
    """
    mu = float(kin.mean[0])
    sig2 = float(kin.cov[0, 0])
    nu = ext.dof
    v = float(ext.scale[0, 0])
    z = np.asarray(measurements, dtype=float).reshape(-1)
    w = np.asarray(omega, dtype=float).reshape(-1)
    if z.size == 0 or w.sum() == 0.0:
        return 1.0

    a_ig = (nu - 2.0) / 2.0  # scipy invgamma shape for the 1-D inverse Wishart
    ig = invgamma(a_ig, scale=v / 2.0)
    e_lo, e_hi = float(ig.ppf(1e-14)), float(ig.ppf(1.0 - 1e-14))
    half = 10.0 * math.sqrt(sig2) + 10.0 * math.sqrt(s * float(ig.mean()) + r_var)
    xi_lo = min(mu, z.min()) - half
    xi_hi = max(mu, z.max()) + half
    xi_pts = sorted(x for x in [mu, *z.tolist()] if xi_lo < x < xi_hi)

    log_ig_const = a_ig * math.log(v / 2.0) - gammaln(a_ig)

    def log_integrand(xi: float, e: float) -> float:
        out = (
            -0.5 * math.log(2.0 * math.pi * sig2)
            - 0.5 * (xi - mu) ** 2 / sig2
            + log_ig_const
            - (a_ig + 1.0) * math.log(e)
            - v / (2.0 * e)
        )
        var = s * e + r_var
        out += np.sum(w * (-0.5 * np.log(2.0 * math.pi * var) - 0.5 * (z - xi) ** 2 / var))
        return out

    # The extent is integrated on a log scale, which keeps the inverse-gamma
    # tails polynomially flat; the mode's log-value is factored out so the
    # integrand stays well inside double range.
    shift = max(
        log_integrand(float(np.clip((mu / sig2 + (w * z).sum() / (s * float(ig.mean()) + r_var))
                                     / (1.0 / sig2 + w.sum() / (s * float(ig.mean()) + r_var)),
                                     xi_lo, xi_hi)), float(ig.mean())),
        log_integrand(mu, float(ig.mean())),
    )

    def integrand(xi: float, u: float) -> float:
        e = math.exp(u)
        return math.exp(log_integrand(xi, e) - shift + u)

    val, err = integrate.nquad(
        integrand,
        [[xi_lo, xi_hi], [math.log(e_lo), math.log(e_hi)]],
        opts=[
            {"points": xi_pts, "epsabs": 1e-300, "epsrel": rtol, "limit": 300},
            {"epsabs": 1e-300, "epsrel": rtol, "limit": 300},
        ],
    )
    if not np.isfinite(val) or (val > 0 and err > 100.0 * rtol * val):
        raise QuadratureError(f"quadrature error {err} too large for value {val}")
    return float(val * math.exp(shift))
