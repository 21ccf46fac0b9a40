"""Delimited file formats and the flat key=value run configuration.

All numbers are serialized with 17 significant digits so every file round
trips bit-exactly.  Formats:

  truth.csv      step,target_id,x,y,vx,vy,e11,e12,e22,gamma
  frames.csv     step,meas_index,x,y
  estimates.csv  step,track_id,x,y,vx,vy,e11,e12,e22,gamma,p1
  diagnostics.csv step,bp_iters,bp_residual,elbo_final
  gospa_per_step.csv step,total,localization,missed,false
  summary.csv    one header row plus one row per (run set or sweep point)

Configuration files are UTF-8 text with one `key = value` pair per line,
`#` comments, and matrices given as row-major comma lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ggiw import GammaParams, GaussianParams, GgiwParams, IWParams
from .models import MotionModel, SensorModel
from .sim import REGION, Frame, GroundTruth, TargetTruth, ncv_motion
from .tracker import TrackerConfig, default_birth_prior


class ConfigError(ValueError):
    """Malformed or missing run-configuration entry."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


def read_csv(path, expected_header: list[str]) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header.split(",") != expected_header:
            raise ValueError(f"{path}: unexpected header {header!r}")
        return [line.strip().split(",") for line in fh if line.strip()]


TRUTH_HEADER = ["step", "target_id", "x", "y", "vx", "vy", "e11", "e12", "e22", "gamma"]
FRAMES_HEADER = ["step", "meas_index", "x", "y"]
ESTIMATES_HEADER = [
    "step", "track_id", "x", "y", "vx", "vy", "e11", "e12", "e22", "gamma", "p1",
]
DIAGNOSTICS_HEADER = ["step", "bp_iters", "bp_residual", "elbo_final"]
GOSPA_HEADER = ["step", "total", "localization", "missed", "false"]


def write_truth(path, truth: GroundTruth) -> None:
    rows = []
    for k in range(truth.num_steps):
        for t in truth.alive(k):
            s = t.states[k]
            e = t.extent
            rows.append(
                (k, t.target_id, float(s[0]), float(s[1]), float(s[2]), float(s[3]),
                 float(e[0, 0]), float(e[0, 1]), float(e[1, 1]), float(t.rate))
            )
    write_csv(path, TRUTH_HEADER, rows)


def read_truth(path) -> GroundTruth:
    rows = read_csv(path, TRUTH_HEADER)
    by_target: dict[int, list] = {}
    for r in rows:
        by_target.setdefault(int(r[1]), []).append(r)
    targets = []
    num_steps = 0
    for tid, trs in sorted(by_target.items()):
        trs.sort(key=lambda r: int(r[0]))
        birth = int(trs[0][0])
        death = int(trs[-1][0]) + 1
        num_steps = max(num_steps, death)
        states = np.zeros((death, 4))
        extent = np.array(
            [[float(trs[0][6]), float(trs[0][7])], [float(trs[0][7]), float(trs[0][8])]]
        )
        for r in trs:
            states[int(r[0])] = [float(r[2]), float(r[3]), float(r[4]), float(r[5])]
        targets.append(
            TargetTruth(tid, birth, death, states, extent, float(trs[0][9]))
        )
    return GroundTruth(num_steps=num_steps, targets=tuple(targets))


def write_frames(path, frames: list[Frame]) -> None:
    rows = []
    for f in frames:
        for i, z in enumerate(f.measurements):
            rows.append((f.step, i, float(z[0]), float(z[1])))
    write_csv(path, FRAMES_HEADER, rows)


def read_frames(path, num_steps: int | None = None) -> list[Frame]:
    rows = read_csv(path, FRAMES_HEADER)
    by_step: dict[int, list] = {}
    last = -1
    for r in rows:
        k = int(r[0])
        last = max(last, k)
        by_step.setdefault(k, []).append((int(r[1]), float(r[2]), float(r[3])))
    n = num_steps if num_steps is not None else last + 1
    frames = []
    for k in range(n):
        pts = sorted(by_step.get(k, []))
        z = np.array([[x, y] for _, x, y in pts]) if pts else np.zeros((0, 2))
        frames.append(Frame(step=k, measurements=z))
    return frames


def write_estimates(path, estimates_per_step) -> None:
    rows = []
    for k, ests in enumerate(estimates_per_step):
        for e in ests:
            rows.append(
                (k, e.track_id, float(e.position[0]), float(e.position[1]),
                 float(e.velocity[0]), float(e.velocity[1]), float(e.extent[0, 0]),
                 float(e.extent[0, 1]), float(e.extent[1, 1]), float(e.rate), float(e.p1))
            )
    write_csv(path, ESTIMATES_HEADER, rows)


def read_estimates(path):
    """Returns {step: [(track_id, position, extent, velocity, rate, p1), ...]}."""
    rows = read_csv(path, ESTIMATES_HEADER)
    out: dict[int, list] = {}
    for r in rows:
        out.setdefault(int(r[0]), []).append(
            (
                int(r[1]),
                np.array([float(r[2]), float(r[3])]),
                np.array([[float(r[6]), float(r[7])], [float(r[7]), float(r[8])]]),
                np.array([float(r[4]), float(r[5])]),
                float(r[9]),
                float(r[10]),
            )
        )
    return out


def write_diagnostics(path, diags) -> None:
    rows = [
        (k, d.bp_iterations, float(d.bp_residual), float(d.elbo_final))
        for k, d in enumerate(diags)
    ]
    write_csv(path, DIAGNOSTICS_HEADER, rows)


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs: scenario, seeds, sensor/motion/tracker knobs."""

    scenario: int = 1
    seed: int = 0
    runs: int = 1
    out_dir: str = "out"
    num_steps: int = 100
    p_detect: float = 0.95
    rho: float = 0.15
    rho_list: tuple[float, ...] = ()
    workers: int = 0  # 0 -> cpu count
    # sensor
    s: float = 0.25
    r_var: float = 1.0
    clutter_rate: float = 10.0
    # motion
    t_step: float = 0.2
    accel_std: float = 1.0
    survival_prob: float = 0.99
    rate_forget: float = 1.1
    extent_forget: float = 50.0
    # tracker
    bp_iters: int = 30
    mf_iters: int = 20
    birth_rate: float = 0.01
    detect_threshold: float = 0.5
    prune_threshold: float = 1e-5
    poisson_tail_tol: float = 1e-5
    cluster_eps: float = 0.0
    cluster_min_pts: int = 2
    censor_threshold: float = 0.5
    damping: float = 1.0
    bp_tol: float = 1e-6
    # birth prior template
    birth_alpha: float = 100.0
    birth_beta: float = 10.0
    birth_pos_var: float = 100.0
    birth_vel_var: float = 25.0
    birth_nu: float = 1000.0
    birth_v: tuple[float, ...] = (994.0 * 64.0, 0.0, 0.0, 994.0 * 36.0)

    def sensor(self) -> SensorModel:
        return SensorModel(
            H=np.hstack([np.eye(2), np.zeros((2, 2))]),
            R=self.r_var * np.eye(2),
            s=self.s,
            p_detect=self.p_detect,
            clutter_rate=self.clutter_rate,
            region_area=(REGION[1] - REGION[0]) * (REGION[3] - REGION[2]),
        )

    def motion(self) -> MotionModel:
        return ncv_motion(
            t=self.t_step,
            accel_std=self.accel_std,
            survival_prob=self.survival_prob,
            rate_forget=self.rate_forget,
            extent_forget=self.extent_forget,
        )

    def birth_prior(self) -> GgiwParams:
        v = np.array(self.birth_v, dtype=float).reshape(2, 2)
        return GgiwParams(
            GammaParams(self.birth_alpha, self.birth_beta),
            GaussianParams(
                np.zeros(4),
                np.diag([self.birth_pos_var, self.birth_pos_var,
                         self.birth_vel_var, self.birth_vel_var]),
            ),
            IWParams(self.birth_nu, v),
        )

    def tracker(self, rho: float | None = None) -> TrackerConfig:
        return TrackerConfig(
            motion=self.motion(),
            sensor=self.sensor(),
            birth_prior=self.birth_prior(),
            rho_phi=self.rho if rho is None else rho,
            bp_iters=self.bp_iters,
            mf_iters=self.mf_iters,
            birth_rate=self.birth_rate,
            detect_threshold=self.detect_threshold,
            prune_threshold=self.prune_threshold,
            poisson_tail_tol=self.poisson_tail_tol,
            cluster_eps=self.cluster_eps,
            cluster_min_pts=self.cluster_min_pts,
            censor_threshold=self.censor_threshold,
            bp_tol=self.bp_tol,
            damping=self.damping,
        )


_ALIASES = {
    "pd": "p_detect",
    "out": "out_dir",
    "ibp": "bp_iters",
    "imf": "mf_iters",
    "t": "t_step",
    "r": "r_var",
}


def parse_config(text: str) -> dict:
    """Parse flat `key = value` text into a {field: value-string} mapping."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[_ALIASES.get(key, key)] = value
    return out


def build_config(mapping: dict, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    valid = {f.name: f for f in fields(RunConfig)}
    updates = {}
    for key, value in mapping.items():
        if value is None:
            continue
        name = _ALIASES.get(key, key)
        if name not in valid:
            raise ConfigError(f"unknown configuration key: {key}")
        current = getattr(cfg, name)
        try:
            if isinstance(current, tuple) or name in ("rho_list", "birth_v"):
                if isinstance(value, (tuple, list)):
                    updates[name] = tuple(float(v) for v in value)
                else:
                    parts = [p for p in str(value).split(",") if p.strip()]
                    updates[name] = tuple(float(p) for p in parts)
            elif isinstance(current, bool):
                updates[name] = str(value).lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                updates[name] = int(value)
            elif isinstance(current, float):
                updates[name] = float(value)
            else:
                updates[name] = str(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
    cfg = replace(cfg, **updates)
    if cfg.runs < 1:
        raise ConfigError("runs must be >= 1")
    if cfg.scenario not in (1, 2):
        raise ConfigError("scenario must be 1 or 2")
    return cfg


def load_config(path: str | Path | None, overrides: dict) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = build_config(parse_config(Path(path).read_text(encoding="utf-8")), cfg)
    return build_config(overrides, cfg)
