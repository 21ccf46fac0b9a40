"""Per-frame filter recursion and track lifecycle management.

One step runs: predict the surviving tracks, censor measurements already well
explained by them, cluster the rest into birth candidates (one new track per
cluster, anchored at the cluster's smallest measurement index), solve the
data association by reweighted BP, then update every track's measurement
rate, kinematics, extent and existence, prune, and emit point estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .assoc_bp import AssocProblem, LegacyEntry, NewEntry, run_bp
from .ggiw import GammaParams, GaussianParams, GgiwParams, IWParams, extent_mean, gamma_mean
from .metrics import gwd
from .mf_update import (
    gamma_posterior,
    mf_fixed_point,
    mf_state_to_assoc,
    predictive_log_likelihood,
    update_legacy,
    update_new,
)
from .models import LEGACY, NEW, MotionModel, SensorModel, Track, predict, truncated_poisson_cap
from .sim import ncv_motion

BUDGET_FACTOR = 1.0


def default_birth_prior() -> GgiwParams:
    return GgiwParams(
        GammaParams(100.0, 10.0),
        GaussianParams(np.zeros(4), np.diag([100.0, 100.0, 25.0, 25.0])),
        IWParams(1000.0, 994.0 * np.diag([64.0, 36.0])),
    )


def default_sensor(p_detect: float = 0.95) -> SensorModel:
    return SensorModel(
        H=np.hstack([np.eye(2), np.zeros((2, 2))]),
        R=np.eye(2),
        s=0.25,
        p_detect=p_detect,
        clutter_rate=10.0,
        region_area=400.0 * 400.0,
    )


@dataclass(frozen=True)
class TrackerConfig:
    motion: MotionModel = field(default_factory=ncv_motion)
    sensor: SensorModel = field(default_factory=default_sensor)
    birth_prior: GgiwParams = field(default_factory=default_birth_prior)
    rho_phi: float = 0.15
    bp_iters: int = 30
    mf_iters: int = 20
    birth_rate: float = 0.01
    detect_threshold: float = 0.5
    prune_threshold: float = 1e-5
    poisson_tail_tol: float = 1e-5
    cluster_eps: float = 0.0  # 0 -> derived from the birth extent template
    cluster_min_pts: int = 1
    censor_threshold: float = 1.0
    bp_tol: float = 1e-6
    damping: float = 1.0
    # duplicate-track merging: tracks whose position, velocity and extent all
    # agree within these bounds are the same hypothesis (0 disables)
    merge_pos: float = 3.0
    merge_vel: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.detect_threshold < 1.0 or not 0.0 < self.prune_threshold < 1.0:
            raise ValueError("thresholds must be in (0, 1)")
        if self.cluster_eps == 0.0:
            ext = self.birth_prior.ext
            top = float(np.linalg.eigvalsh(extent_mean(ext)).max())
            object.__setattr__(self, "cluster_eps", 2.0 * np.sqrt(top))
        if self.cluster_eps <= 0.0:
            raise ValueError("cluster radius must be positive")


@dataclass(frozen=True)
class TrackerState:
    tracks: tuple[Track, ...] = ()
    next_id: int = 0
    step: int = 0


@dataclass(frozen=True)
class Estimate:
    track_id: int
    position: np.ndarray
    velocity: np.ndarray
    extent: np.ndarray
    rate: float
    p1: float


@dataclass(frozen=True)
class StepDiagnostics:
    bp_iterations: int
    bp_residual: float
    elbo_final: float
    num_tracks: int
    num_births: int


def _dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Classic density clustering; returns labels with -1 for noise."""
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    close = cdist(points, points) <= eps
    core = close.sum(axis=1) >= min_pts
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        stack = [i]
        labels[i] = cluster
        while stack:
            j = stack.pop()
            if not core[j]:
                continue
            for k in np.flatnonzero(close[j]):
                if labels[k] == -1:
                    labels[k] = cluster
                    if core[k]:
                        stack.append(k)
        cluster += 1
    return labels


def init_new_tracks(
    measurements: np.ndarray,
    legacy_evidence: np.ndarray,
    budgets: np.ndarray,
    cfg: TrackerConfig,
) -> list[tuple[int, int, Track]]:
    """Birth candidates from measurements not explained by existing tracks.

    legacy_evidence is the (N, M) matrix of state-to-association values and
    budgets the per-track censoring capacity (about the expected measurement
    count).  Each density cluster of the uncensored remainder yields one new
    track anchored at its smallest measurement index, centered on the
    cluster's most central measurement.
    """
    m = len(measurements)
    if m == 0:
        return []
    if legacy_evidence.size:
        # Rate-budgeted censoring: a track suppresses birth only for about as
        # many measurements as its rate supports (an unbounded rule lets one
        # merged track blanket a whole group forever).  Claims are granted in
        # global evidence order and a claim on an already-censored measurement
        # costs nothing, so overlapping tracks jointly cover dense regions.
        rows, cols = np.nonzero(legacy_evidence > cfg.censor_threshold)
        order = np.argsort(-legacy_evidence[rows, cols])
        censored = np.zeros(m, dtype=bool)
        spent = np.zeros(len(budgets), dtype=int)
        for idx in order:
            i, mm = rows[idx], cols[idx]
            if censored[mm] or spent[i] >= budgets[i]:
                continue
            censored[mm] = True
            spent[i] += 1
        eligible = np.flatnonzero(~censored)
    else:
        eligible = np.arange(m)
    if eligible.size == 0:
        return []
    labels = _dbscan(measurements[eligible], cfg.cluster_eps, cfg.cluster_min_pts)
    births = []
    for lab in range(labels.max() + 1 if labels.size else 0):
        members = eligible[labels == lab]
        pts = measurements[members]
        center = pts.mean(axis=0)
        central = pts[np.argmin(((pts - center) ** 2).sum(axis=1))]
        anchor = int(members.min())
        tmpl = cfg.birth_prior
        mean = np.concatenate([central, np.zeros(tmpl.kin.dim - len(central))])
        prior = GgiwParams(tmpl.rate, GaussianParams(mean, tmpl.kin.cov), tmpl.ext)
        births.append((anchor, len(members), Track(id=-1, kind=NEW, p0=0.5, p1=0.5, state=prior)))
    births.sort(key=lambda x: x[0])
    return births


def prune(state: TrackerState, threshold: float) -> TrackerState:
    """Drop tracks whose existence probability fell below the threshold."""
    kept = tuple(t for t in state.tracks if t.p1 >= threshold)
    return replace(state, tracks=kept)


def merge_duplicates(tracks: list[Track], pos_tol: float, vel_tol: float) -> list[Track]:
    """Collapse track pairs that are the same hypothesis.

    Two tracks describing one target sit on the same measurements and share
    position, velocity and extent; genuinely distinct targets passing close
    still differ in heading, so the velocity gate keeps crossings intact.
    The higher-existence track absorbs the duplicate.
    """
    if pos_tol <= 0.0 or not tracks:
        return list(tracks)
    order = sorted(range(len(tracks)), key=lambda i: -tracks[i].p1)
    kept: list[Track] = []
    for i in order:
        t = tracks[i]
        duplicate = False
        for k in kept:
            dp = np.linalg.norm(t.state.kin.mean[:2] - k.state.kin.mean[:2])
            dv = np.linalg.norm(t.state.kin.mean[2:] - k.state.kin.mean[2:])
            if dp < pos_tol and dv < vel_tol:
                de = gwd(
                    np.zeros(2), extent_mean(t.state.ext),
                    np.zeros(2), extent_mean(k.state.ext),
                )
                if de < pos_tol:
                    duplicate = True
                    break
        if not duplicate:
            kept.append(t)
    kept.sort(key=lambda t: t.id)
    return kept


def step(
    state: TrackerState, measurements: np.ndarray, cfg: TrackerConfig
) -> tuple[TrackerState, list[Estimate], StepDiagnostics]:
    """One full filter recursion over a frame of measurements."""
    sensor = cfg.sensor
    z = np.asarray(measurements, dtype=float).reshape(-1, sensor.dim_z)
    m = z.shape[0]

    predicted = [predict(t, cfg.motion) for t in state.tracks]
    n = len(predicted)

    legacy_mf = np.ones((n, m + 1))
    for i, t in enumerate(predicted):
        legacy_mf[i] = mf_state_to_assoc(t, sensor, z)
    budgets = np.array(
        [
            int(np.ceil(BUDGET_FACTOR * (gamma_mean(t.state.rate) + 3.0 * np.sqrt(
                t.state.rate.alpha / t.state.rate.beta**2
            ))))
            for t in predicted
        ],
        dtype=int,
    )
    births = init_new_tracks(z, legacy_mf[:, 1:], budgets, cfg)

    legacy_entries = []
    for t in predicted:
        cap, c_gamma = truncated_poisson_cap(t.state.rate, cfg.poisson_tail_tol)
        legacy_entries.append(
            LegacyEntry(p1=t.p1, p0=t.p0, alpha=t.state.rate.alpha, beta=t.state.rate.beta,
                        cap=cap, c_gamma=c_gamma)
        )
    new_entries, new_mf, new_tracks = [], [], []
    if births:
        cap_rate, cg_new = truncated_poisson_cap(cfg.birth_prior.rate, cfg.poisson_tail_tol)
        for anchor, size, track in births:
            # a birth hypothesis cannot claim more slots than its spawning
            # cluster has members; without this, a clutter singleton would be
            # updated as if it carried a full rate-prior's worth of evidence
            cap = min(cap_rate, size)
            new_entries.append(
                NewEntry(meas_idx=anchor, alpha=track.state.rate.alpha,
                         beta=track.state.rate.beta, cap=cap, c_gamma=cg_new)
            )
            new_mf.append(
                mf_state_to_assoc(track, sensor, z, birth_rate=cfg.birth_rate, anchor=anchor)
            )
            new_tracks.append(track)

    problem = AssocProblem(
        num_meas=m,
        p_detect=sensor.p_detect,
        birth_rate=cfg.birth_rate,
        rho_phi=cfg.rho_phi,
        legacy=tuple(legacy_entries),
        legacy_mf=legacy_mf,
        new=tuple(new_entries),
        new_mf=np.array(new_mf).reshape(len(new_entries), m),
    )
    _, beliefs = run_bp(problem, cfg.bp_iters, tol=cfg.bp_tol, damping=cfg.damping)

    updated: list[Track] = []
    elbos: list[float] = []
    for i, t in enumerate(predicted):
        entry = legacy_entries[i]
        omega = entry.cap * beliefs.legacy[i, 1:]
        post = mf_fixed_point(t.state, z, omega, sensor, cfg.mf_iters)
        log_pz = predictive_log_likelihood(t.state, post, sensor)
        rate_post = gamma_posterior(
            t.state.rate, float(beliefs.legacy_agg[i]), entry.cap, entry.c_gamma,
            sensor.p_detect, kind=LEGACY,
        )
        updated.append(update_legacy(t, post, rate_post, log_pz, sensor))
        if post.omega.size:
            elbos.append(float(post.elbo_trace[-1]))

    next_id = state.next_id
    for k, track in enumerate(new_tracks):
        entry = new_entries[k]
        omega = entry.cap * beliefs.new[k]
        post = mf_fixed_point(track.state, z, omega, sensor, cfg.mf_iters)
        log_pz = predictive_log_likelihood(track.state, post, sensor)
        rate_post = gamma_posterior(
            track.state.rate, float(beliefs.new_agg[k]), entry.cap, entry.c_gamma,
            sensor.p_detect, kind=NEW,
        )
        updated.append(
            update_new(track, post, rate_post, log_pz, cfg.birth_rate, sensor, new_id=next_id)
        )
        next_id += 1
        if post.omega.size:
            elbos.append(float(post.elbo_trace[-1]))

    merged = merge_duplicates(updated, cfg.merge_pos, cfg.merge_vel)
    out = TrackerState(tracks=tuple(merged), next_id=next_id, step=state.step + 1)
    out = prune(out, cfg.prune_threshold)
    estimates = [
        Estimate(
            track_id=t.id,
            position=t.state.kin.mean[:2].copy(),
            velocity=t.state.kin.mean[2:].copy(),
            extent=extent_mean(t.state.ext),
            rate=gamma_mean(t.state.rate),
            p1=t.p1,
        )
        for t in out.tracks
        if t.p1 > cfg.detect_threshold
    ]
    diag = StepDiagnostics(
        bp_iterations=beliefs.iterations,
        bp_residual=float(beliefs.residual),
        elbo_final=float(np.mean(elbos)) if elbos else 0.0,
        num_tracks=len(out.tracks),
        num_births=len(new_tracks),
    )
    return out, estimates, diag


def run(frames, cfg: TrackerConfig, state: TrackerState | None = None):
    """Run the filter over a frame sequence; returns per-step estimates and diagnostics."""
    state = TrackerState() if state is None else state
    all_estimates, all_diags = [], []
    for frame in frames:
        z = frame.measurements if hasattr(frame, "measurements") else frame
        state, est, diag = step(state, z, cfg)
        all_estimates.append(est)
        all_diags.append(diag)
    return state, all_estimates, all_diags
