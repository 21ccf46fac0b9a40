"""Reweighted-BP data association over legacy and new potential targets.

All six message families collapse to positive scalars after rescaling (each
message divided by its value on the reference event), and slots of the same
track carry identical messages, so the state is one scalar per (track,
measurement) pair plus one per track.  The factor appearance probability
rho_phi of the consistency factors weights the messages; rho_phi = 1 recovers
standard BP.  The detection factors keep rho = 1 throughout.

Conventions: measurements are 0-indexed internally; a new track anchored at
measurement index j may only claim measurements j..M-1; its messages are zero
outside that range.  All message arithmetic is linear-domain with a 1e-300
floor, except the detection-factor sums which run in log domain to survive
large counts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

log = logging.getLogger(__name__)

MESSAGE_FLOOR = 1e-300
MESSAGE_CAP = 1e150


class DivisionByZeroError(ZeroDivisionError):
    """A new track has no admissible measurement with positive evidence."""


@dataclass(frozen=True)
class LegacyEntry:
    """Per-legacy-track inputs: predicted existence and gamma parameters plus cap."""

    p1: float
    p0: float
    alpha: float
    beta: float
    cap: int
    c_gamma: float


@dataclass(frozen=True)
class NewEntry:
    """Per-new-track inputs: anchor measurement index (0-based) and prior gamma."""

    meas_idx: int
    alpha: float
    beta: float
    cap: int
    c_gamma: float


@dataclass(frozen=True)
class AssocProblem:
    """One frame's association problem.

    legacy_mf has shape (N, M+1): column 0 holds the dummy-association value of
    the state-to-association message (the engine normalizes each row by it, so
    rows may be supplied at any positive scale).  new_mf has shape (K, M) with
    zeros outside each row's admissible range [meas_idx, M).
    """

    num_meas: int
    p_detect: float
    birth_rate: float
    rho_phi: float
    legacy: tuple[LegacyEntry, ...]
    legacy_mf: np.ndarray
    new: tuple[NewEntry, ...]
    new_mf: np.ndarray

    def __post_init__(self):
        if not 0.0 < self.rho_phi <= 1.0:
            raise ValueError("rho_phi must be in (0, 1]")
        n, k, m = len(self.legacy), len(self.new), self.num_meas
        lm = np.asarray(self.legacy_mf, dtype=float).reshape(n, m + 1 if m or n else 1)
        nm = np.asarray(self.new_mf, dtype=float).reshape(k, m) if k else np.zeros((0, m))
        object.__setattr__(self, "legacy_mf", lm)
        object.__setattr__(self, "new_mf", nm)
        if n and (not np.isfinite(lm).all() or lm.min() < 0.0):
            raise ValueError("legacy MF messages must be finite and nonnegative")
        if k and (not np.isfinite(nm).all() or nm.min() < 0.0):
            raise ValueError("new MF messages must be finite and nonnegative")
        idx = [e.meas_idx for e in self.new]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("new-track anchor indices must be strictly increasing")
        if any(not 0 <= j < m for j in idx):
            raise ValueError("new-track anchor index out of range")
        if any(e.cap < 1 for e in self.legacy) or any(e.cap < 1 for e in self.new):
            raise ValueError("caps must be >= 1")


@dataclass(frozen=True)
class MessageState:
    """Rescaled scalar messages, one per (track, measurement) and one per track.

    legacy_* arrays are (N, M); new_* arrays are (K, M) and zero outside each
    row's admissible range.  h2a vectors are (N,) and (K,).
    """

    legacy_b2a: np.ndarray
    legacy_h2a: np.ndarray
    legacy_a2b: np.ndarray
    new_b2a: np.ndarray
    new_h2a: np.ndarray
    new_a2b: np.ndarray


@dataclass(frozen=True)
class AssocBeliefs:
    """Marginal association beliefs and the evidence aggregates used downstream.

    legacy has shape (N, M+1): column 0 is the missed-detection probability.
    new has shape (K, M) with rows summing to one over each admissible range
    (the dummy value is identically zero).  legacy_agg / new_agg hold the
    final aggregated message sum feeding the measurement-rate posteriors.
    """

    legacy: np.ndarray
    new: np.ndarray
    legacy_agg: np.ndarray
    new_agg: np.ndarray
    iterations: int
    residual: float


def _log_gamma_integral(alpha: float, beta: float, eps: np.ndarray) -> np.ndarray:
    """ln of int gamma^eps exp(-gamma) G(gamma; alpha, beta) dgamma."""
    return (
        alpha * math.log(beta)
        - (eps + alpha) * math.log(beta + 1.0)
        + gammaln(alpha + eps)
        - gammaln(alpha)
    )


class _Tables:
    """Iteration-independent pieces: normalized MF rows, masks and log coefficient tables."""

    def __init__(self, p: AssocProblem):
        n, k, m = len(p.legacy), len(p.new), p.num_meas
        self.rho = p.rho_phi
        self.num_meas = m
        self.legacy_caps = np.array([e.cap for e in p.legacy], dtype=float)
        self.new_caps = np.array([e.cap for e in p.new], dtype=float)
        self.new_idx = np.array([e.meas_idx for e in p.new], dtype=int)

        ref = p.legacy_mf[:, 0] if n else np.ones(0)
        if n and ref.min() <= 0.0:
            raise ValueError("legacy MF dummy value must be positive")
        self.legacy_mf = p.legacy_mf[:, 1:] / ref[:, None] if n else np.zeros((0, m))
        # New rows arrive birth-rate scaled; the aggregate m-tilde must carry the
        # birth weight once per track (it sits in the detection tables), not once
        # per claimed measurement, so the per-measurement scale is divided out.
        if k and p.birth_rate <= 0.0:
            raise ValueError("birth rate must be positive when new tracks exist")
        self.new_mf = p.new_mf / p.birth_rate if k else p.new_mf.copy()
        cols = np.arange(m)
        self.new_mask = cols[None, :] >= self.new_idx[:, None] if k else np.zeros((0, m), bool)
        self.new_mf[~self.new_mask] = 0.0
        # Rows with a single admissible measurement, structurally or because
        # the evidence elsewhere underflowed, use the documented neutral
        # reference instead of the (empty) alternatives sum.
        self.new_single = (
            np.minimum(self.new_mask.sum(axis=1), (self.new_mf > 0.0).sum(axis=1)) <= 1
            if k
            else np.zeros(0, bool)
        )

        # Detection-factor tables, padded to the max cap with -inf.  Row n holds
        # ln f1(eps+1) - ln eps! and ln f0(eps) - ln eps! for eps = 0..cap-1.
        def build(entries, legacy: bool):
            if not entries:
                return np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 1))
            lmax = max(e.cap for e in entries)
            eps = np.arange(lmax, dtype=float)
            num = np.full((len(entries), lmax), -np.inf)
            den = np.full((len(entries), lmax), -np.inf)
            for i, e in enumerate(entries):
                r = np.arange(e.cap, dtype=float)
                lg1 = _log_gamma_integral(e.alpha, e.beta, r + 1.0)
                lg0 = _log_gamma_integral(e.alpha, e.beta, r)
                if legacy:
                    base = math.log(e.c_gamma) + math.log(p.p_detect) - math.log(e.cap)
                    base += math.log(e.p1) if e.p1 > 0.0 else -np.inf
                    num[i, : e.cap] = base + lg1
                    den[i, : e.cap] = base + lg0 + np.log(e.cap - r)
                    f00 = e.p0
                    if e.p1 > 0.0:
                        f00 += e.p1 * e.c_gamma * (
                            1.0 - p.p_detect + p.p_detect * math.exp(lg0[0])
                        )
                    den[i, 0] = math.log(f00) if f00 > 0.0 else -np.inf
                else:
                    pd = min(p.p_detect, 1.0 - 1e-9)
                    base = (
                        math.log(p.birth_rate)
                        + math.log(e.c_gamma)
                        + math.log(pd)
                        - math.log1p(-pd)
                        - math.log(e.cap)
                    )
                    num[i, : e.cap] = base + lg1
                    with np.errstate(divide="ignore"):
                        den[i, : e.cap] = base + lg0 + np.log(e.cap - r)
                    den[i, 0] = 0.0  # f0(0) = 1
                num[i, : e.cap] -= gammaln(r + 1.0)
                den[i, : e.cap] -= gammaln(r + 1.0)
            return num, den, eps

        self.l_num, self.l_den, self.l_eps = build(list(p.legacy), legacy=True)
        self.n_num, self.n_den, self.n_eps = build(list(p.new), legacy=False)

    def h2a(self, mtilde: np.ndarray, num: np.ndarray, den: np.ndarray, eps: np.ndarray):
        if mtilde.size == 0:
            return np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            lmt = np.log(mtilde)[:, None]
            pow_term = np.where(
                np.isneginf(lmt) & (eps[None, :] == 0), 0.0, eps[None, :] * lmt
            )
        out = np.exp(logsumexp(num + pow_term, axis=1) - logsumexp(den + pow_term, axis=1))
        return np.clip(np.nan_to_num(out, nan=MESSAGE_FLOOR), MESSAGE_FLOOR, MESSAGE_CAP)


def init_messages(p: AssocProblem) -> MessageState:
    """Seed the iteration: a->b messages from the MF evidence alone.

    Raises DivisionByZeroError when a new track has no admissible measurement
    with positive MF evidence (a malformed problem).
    """
    t = _Tables(p)
    n, k, m = len(p.legacy), len(p.new), p.num_meas
    row_tot = t.legacy_mf.sum(axis=1, keepdims=True) if n else np.zeros((0, 1))
    legacy_a2b = t.legacy_mf / (1.0 + row_tot - t.legacy_mf) if n else np.zeros((0, m))
    if k:
        if (t.new_mf.sum(axis=1) <= 0.0).any():
            raise DivisionByZeroError("new track has no positive MF evidence")
        alt = t.new_mf.sum(axis=1, keepdims=True) - t.new_mf
        alt[t.new_single, :] = 1.0  # single admissible measurement: neutral reference
        alt = np.maximum(alt, MESSAGE_FLOOR)
        new_a2b = np.where(t.new_mask, t.new_mf / alt, 0.0)
    else:
        new_a2b = np.zeros((0, m))
    legacy_a2b = np.clip(legacy_a2b, MESSAGE_FLOOR, None) if n else legacy_a2b
    if k:
        new_a2b[t.new_mask] = np.clip(new_a2b[t.new_mask], MESSAGE_FLOOR, None)
    return MessageState(
        legacy_b2a=np.ones((n, m)),
        legacy_h2a=np.ones(n),
        legacy_a2b=legacy_a2b,
        new_b2a=np.where(t.new_mask, 1.0, 0.0),
        new_h2a=np.ones(k),
        new_a2b=new_a2b,
    )


def _sweep(t: _Tables, st: MessageState) -> MessageState:
    rho = t.rho
    n, k = st.legacy_a2b.shape[0], st.new_a2b.shape[0]

    la = st.legacy_a2b**rho
    na = st.new_a2b**rho  # zero outside masks
    total = 1.0 + t.legacy_caps @ la + t.new_caps @ na if (n or k) else np.ones(t.num_meas)

    legacy_b2a = st.legacy_a2b ** (rho - 1.0) / np.maximum(total - la, 1.0) if n else st.legacy_b2a
    if k:
        new_b2a = np.where(
            t.new_mask,
            np.where(t.new_mask, st.new_a2b, 1.0) ** (rho - 1.0)
            / np.maximum(total - na, 1.0),
            0.0,
        )
    else:
        new_b2a = st.new_b2a
    legacy_b2a = np.clip(legacy_b2a, MESSAGE_FLOOR, MESSAGE_CAP)
    if k:
        new_b2a[t.new_mask] = np.clip(new_b2a[t.new_mask], MESSAGE_FLOOR, MESSAGE_CAP)

    l_mt = (t.legacy_mf * legacy_b2a**rho).sum(axis=1) if n else np.zeros(0)
    n_mt = (t.new_mf * new_b2a**rho).sum(axis=1) if k else np.zeros(0)
    legacy_h2a = t.h2a(l_mt, t.l_num, t.l_den, t.l_eps)
    new_h2a = t.h2a(n_mt, t.n_num, t.n_den, t.n_eps)

    if n:
        terms = t.legacy_mf * legacy_h2a[:, None] * legacy_b2a**rho
        # the denominator is 1 + sum over the other measurements, hence >= 1;
        # the clamp guards the catastrophic cancellation of (1 + total) - term
        # when a single term dominates at >= 1e16
        denom = np.maximum(1.0 + terms.sum(axis=1, keepdims=True) - terms, 1.0)
        legacy_a2b = legacy_b2a ** (rho - 1.0) * t.legacy_mf * legacy_h2a[:, None] / denom
        legacy_a2b = np.clip(legacy_a2b, MESSAGE_FLOOR, MESSAGE_CAP)
    else:
        legacy_a2b = st.legacy_a2b
    if k:
        terms = t.new_mf * new_h2a[:, None] * new_b2a**rho
        alt = terms.sum(axis=1, keepdims=True) - terms
        alt[t.new_single, :] = 1.0
        alt = np.maximum(alt, terms * 1e-16 + MESSAGE_FLOOR)
        new_a2b = np.where(
            t.new_mask,
            np.where(t.new_mask, new_b2a, 1.0) ** (rho - 1.0)
            * t.new_mf
            * new_h2a[:, None]
            / alt,
            0.0,
        )
        new_a2b[t.new_mask] = np.clip(new_a2b[t.new_mask], MESSAGE_FLOOR, MESSAGE_CAP)
    else:
        new_a2b = st.new_a2b

    return MessageState(legacy_b2a, legacy_h2a, legacy_a2b, new_b2a, new_h2a, new_a2b)


def sweep(p: AssocProblem, st: MessageState) -> MessageState:
    """One full message update: all b->a, then all h->a, then all a->b."""
    return _sweep(_Tables(p), st)


def _beliefs(t: _Tables, st: MessageState, iterations: int, residual: float) -> AssocBeliefs:
    n, k, m = st.legacy_a2b.shape[0], st.new_a2b.shape[0], t.num_meas
    if n:
        vals = t.legacy_mf * st.legacy_h2a[:, None] * st.legacy_b2a**t.rho
        legacy = np.concatenate([np.ones((n, 1)), vals], axis=1)
        legacy /= legacy.sum(axis=1, keepdims=True)
        legacy_agg = (t.legacy_mf * st.legacy_b2a**t.rho).sum(axis=1)
    else:
        legacy, legacy_agg = np.ones((0, m + 1)), np.zeros(0)
    if k:
        vals = t.new_mf * st.new_h2a[:, None] * st.new_b2a**t.rho
        tot = vals.sum(axis=1, keepdims=True)
        new = np.where(t.new_mask, vals / np.maximum(tot, MESSAGE_FLOOR), 0.0)
        new_agg = (t.new_mf * st.new_b2a**t.rho).sum(axis=1)
    else:
        new, new_agg = np.zeros((0, m)), np.zeros(0)
    return AssocBeliefs(legacy, new, legacy_agg, new_agg, iterations, residual)


def run_bp(
    p: AssocProblem,
    iters: int,
    tol: float = 1e-6,
    damping: float = 1.0,
    accelerate: bool | None = None,
) -> tuple[MessageState, AssocBeliefs]:
    """Iterate message sweeps and return the final state with beliefs.

    Stops early once the max relative change of the a->b messages drops below
    tol.  Non-convergence within `iters` is not an error; the last state is
    returned and the residual is reported on the beliefs.

    The plain sweep crawls log-linearly toward fixed points whose magnitudes
    scale like the (1/rho)-th power of the evidence (the exclusion terms enter
    at power rho), far too slowly for practical iteration budgets; per-entry
    Aitken extrapolation on the log messages jumps that geometric tail.  Only
    entries with a twice-confirmed stable decay ratio are extrapolated, and
    fixed points are untouched.
    """
    if iters < 1:
        raise ValueError("need at least one iteration")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must be in (0, 1]")
    if accelerate is None:
        accelerate = True
    t = _Tables(p)
    st = init_messages(p)
    residual = np.inf
    it = 0
    if p.num_meas == 0 or (not p.legacy and not p.new):
        st = _sweep(t, st)
        return st, _beliefs(t, st, 1, 0.0)
    def log_arr(arr, mask):
        safe = arr if mask is None else np.where(mask, arr, 1.0)
        return np.log(safe)

    def aitken(new_arr, old_arr, hist, mask):
        """Per-entry geometric-series extrapolation on log messages.

        An entry crawling log-linearly (consecutive log-steps with a stable,
        twice-confirmed decay ratio) is extrapolated to its geometric limit;
        everything else keeps the plain update.  hist carries (previous step,
        previous ratio) per entry and is invalidated where a jump fired.
        """
        step = log_arr(new_arr, mask) - log_arr(old_arr, mask)
        if hist is None:
            return new_arr, (step, np.full_like(step, np.nan))
        prev_step, prev_ratio = hist
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = step / prev_step
        lam = np.minimum(ratio, prev_ratio)  # conservative decay estimate
        with np.errstate(divide="ignore", invalid="ignore"):
            mult = np.minimum(lam / (1.0 - lam), 80.0)
        steady = (
            np.isfinite(ratio)
            & np.isfinite(prev_ratio)
            & (np.abs(ratio - prev_ratio) < 0.02)
            & (lam > 0.3)
            & (lam < 0.9975)
            & (np.abs(step) > 1e-12)
            & (np.abs(step) < 2.0)
        )
        jump = np.where(steady, np.clip(step * mult, -60.0, 60.0), 0.0)
        out = np.clip(np.exp(log_arr(new_arr, mask) + jump), MESSAGE_FLOOR, MESSAGE_CAP)
        if mask is not None:
            out = np.where(mask, out, 0.0)
        # a jump invalidates the step history for the affected entries
        step = np.where(steady, np.nan, step)
        return out, (step, np.where(steady, np.nan, ratio))

    prev_l = prev_n = None
    for it in range(1, iters + 1):
        new = _sweep(t, st)
        if accelerate:
            la, prev_l = aitken(new.legacy_a2b, st.legacy_a2b, prev_l, None)
            if t.new_mask.any():
                na, prev_n = aitken(new.new_a2b, st.new_a2b, prev_n, t.new_mask)
            else:
                na = new.new_a2b
            new = MessageState(
                new.legacy_b2a, new.legacy_h2a, la, new.new_b2a, new.new_h2a, na
            )
        if damping < 1.0:
            new = MessageState(
                new.legacy_b2a,
                new.legacy_h2a,
                damping * new.legacy_a2b + (1.0 - damping) * st.legacy_a2b,
                new.new_b2a,
                new.new_h2a,
                np.where(
                    t.new_mask, damping * new.new_a2b + (1.0 - damping) * st.new_a2b, 0.0
                ),
            )
        num = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            if st.legacy_a2b.size:
                r = np.abs(new.legacy_a2b - st.legacy_a2b) / st.legacy_a2b
                num = float(np.nan_to_num(r, nan=0.0, posinf=np.inf).max())
            if st.new_a2b.size and t.new_mask.any():
                r = (
                    np.abs(new.new_a2b[t.new_mask] - st.new_a2b[t.new_mask])
                    / st.new_a2b[t.new_mask]
                )
                num = max(num, float(np.nan_to_num(r, nan=0.0, posinf=np.inf).max()))
        residual = num
        st = new
        if residual < tol:
            break
    return st, _beliefs(t, st, it, residual)
