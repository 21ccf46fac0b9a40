"""Command-line entry points.

Commands: simulate, track, eval, mc, sweep-rho.  Exit codes: 0 on success,
1 on runtime errors, 2 on usage/configuration errors.  Monte-Carlo runs are
distributed over a process pool with per-run seeds derived as base seed plus
run index, so results do not depend on the worker count.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio
from .fileio import ConfigError, RunConfig
from .metrics import gospa
from .sim import generate_measurements, make_scenario
from .tracker import TrackerState, run as run_tracker


def _eval_gospa(truth, estimates_by_step, num_steps):
    rows = []
    for k in range(num_steps):
        t = [(tt.states[k][:2], tt.extent) for tt in truth.alive(k)]
        ests = estimates_by_step.get(k, [])
        e = [(pos, ext) for (_tid, pos, ext, _v, _g, _p) in ests]
        g = gospa(e, t)
        rows.append((k, g.total, g.localization, g.missed, g.false))
    return rows


def _single_run(cfg: RunConfig, seed: int, rho: float):
    t0 = time.perf_counter()
    truth = make_scenario(cfg.scenario, seed=seed, num_steps=cfg.num_steps,
                          motion=cfg.motion())
    frames = generate_measurements(truth, cfg.sensor(), seed=seed)
    _, ests, diags = run_tracker(frames, cfg.tracker(rho))
    by_step = {
        k: [(e.track_id, e.position, e.extent, e.velocity, e.rate, e.p1) for e in row]
        for k, row in enumerate(ests)
    }
    rows = _eval_gospa(truth, by_step, cfg.num_steps)
    wall = time.perf_counter() - t0
    return np.array([r[1:] for r in rows]), wall


def _run_seed_grid(cfg: RunConfig, rhos: list[float]):
    """All (rho, run) jobs on a process pool; returns {rho: (per_step, walls)}."""
    jobs = [(rho, cfg.seed + i) for rho in rhos for i in range(cfg.runs)]
    workers = cfg.workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, [(cfg, seed, rho) for rho, seed in jobs]))
    else:
        results = [_worker((cfg, seed, rho)) for rho, seed in jobs]
    out = {}
    idx = 0
    for rho in rhos:
        per_step = []
        walls = []
        for _ in range(cfg.runs):
            arr, wall = results[idx]
            per_step.append(arr)
            walls.append(wall)
            idx += 1
        out[rho] = (np.array(per_step), np.array(walls))
    return out


def _worker(args):
    cfg, seed, rho = args
    return _single_run(cfg, seed, rho)


def _plot_gospa_vs_step(path, mean_rows):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = np.arange(len(mean_rows))
    labels = ["total", "localization", "missed", "false"]
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for i, lab in enumerate(labels):
        ax.plot(steps, mean_rows[:, i], label=lab)
    ax.set_xlabel("time step")
    ax.set_ylabel("mean GOSPA")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _plot_gospa_vs_rho(path, rhos, totals):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(rhos, totals, marker="o")
    ax.set_xlabel("factor appearance probability")
    ax.set_ylabel("accumulated mean GOSPA")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_simulate(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = make_scenario(cfg.scenario, seed=cfg.seed, num_steps=cfg.num_steps,
                          motion=cfg.motion())
    frames = generate_measurements(truth, cfg.sensor(), seed=cfg.seed)
    fileio.write_truth(out / "truth.csv", truth)
    fileio.write_frames(out / "frames.csv", frames)
    print(f"wrote {out / 'truth.csv'} and {out / 'frames.csv'}")
    return 0


def cmd_track(cfg: RunConfig, frames_path: str | None) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames_file = Path(frames_path) if frames_path else out / "frames.csv"
    frames = fileio.read_frames(frames_file)
    _, ests, diags = run_tracker(frames, cfg.tracker())
    fileio.write_estimates(out / "estimates.csv", ests)
    fileio.write_diagnostics(out / "diagnostics.csv", diags)
    print(f"wrote {out / 'estimates.csv'} and {out / 'diagnostics.csv'}")
    return 0


def cmd_eval(cfg: RunConfig, estimates_path: str | None, truth_path: str | None) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = fileio.read_truth(Path(truth_path) if truth_path else out / "truth.csv")
    ests = fileio.read_estimates(
        Path(estimates_path) if estimates_path else out / "estimates.csv"
    )
    rows = _eval_gospa(truth, ests, truth.num_steps)
    fileio.write_csv(out / "gospa_per_step.csv", fileio.GOSPA_HEADER, rows)
    arr = np.array([r[1:] for r in rows])
    totals = arr.sum(axis=0)
    fileio.write_csv(
        out / "summary.csv",
        ["runs", "gospa", "localization", "missed", "false", "wallclock_s"],
        [(1, *map(float, totals), 0.0)],
    )
    print(f"accumulated GOSPA {totals[0]:.1f} "
          f"(loc {totals[1]:.1f}, missed {totals[2]:.1f}, false {totals[3]:.1f})")
    return 0


def cmd_mc(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = _run_seed_grid(cfg, [cfg.rho])
    per_step, walls = results[cfg.rho]
    mean_rows = per_step.mean(axis=0)
    fileio.write_csv(
        out / "gospa_per_step.csv",
        fileio.GOSPA_HEADER,
        [(k, *map(float, mean_rows[k])) for k in range(len(mean_rows))],
    )
    acc = mean_rows.sum(axis=0)
    fileio.write_csv(
        out / "summary.csv",
        ["runs", "gospa", "localization", "missed", "false", "wallclock_s"],
        [(cfg.runs, *map(float, acc), float(walls.mean()))],
    )
    _plot_gospa_vs_step(out / "gospa_vs_step.pdf", mean_rows)
    print(f"{cfg.runs} runs: accumulated mean GOSPA {acc[0]:.1f} "
          f"(loc {acc[1]:.1f}, missed {acc[2]:.1f}, false {acc[3]:.1f}); "
          f"mean wall-clock {walls.mean():.1f}s")
    return 0


def cmd_sweep_rho(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rhos = list(cfg.rho_list) or [round(0.1 + 0.05 * i, 2) for i in range(19)]
    results = _run_seed_grid(cfg, rhos)
    rows = []
    totals = []
    for rho in rhos:
        per_step, walls = results[rho]
        acc = per_step.mean(axis=0).sum(axis=0)
        rows.append((float(rho), cfg.runs, *map(float, acc), float(walls.mean())))
        totals.append(acc[0])
    fileio.write_csv(
        out / "summary.csv",
        ["rho", "runs", "gospa", "localization", "missed", "false", "wallclock_s"],
        rows,
    )
    _plot_gospa_vs_rho(out / "gospa_vs_rho.pdf", rhos, totals)
    best = rhos[int(np.argmin(totals))]
    print(f"swept {len(rhos)} values; minimum accumulated GOSPA {min(totals):.1f} "
          f"at rho={best}")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ettrack",
        description="Extended-target tracking: simulation, filtering and GOSPA evaluation",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="path to a key = value configuration file")
        sp.add_argument("--seed", type=int, help="base RNG seed")
        sp.add_argument("--runs", type=int, help="number of Monte-Carlo runs")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--scenario", type=int, choices=(1, 2), help="built-in scenario")
        sp.add_argument("--pd", type=float, help="detection probability")
        sp.add_argument("--rho", type=float, help="consistency-factor appearance probability")

    sp = sub.add_parser("simulate", help="write truth.csv and frames.csv for a scenario")
    common(sp)
    sp = sub.add_parser("track", help="run the filter over frames.csv")
    common(sp)
    sp.add_argument("--frames", help="path to frames.csv (default <out>/frames.csv)")
    sp = sub.add_parser("eval", help="score estimates.csv against truth.csv")
    common(sp)
    sp.add_argument("--estimates", help="path to estimates.csv")
    sp.add_argument("--truth", help="path to truth.csv")
    sp = sub.add_parser("mc", help="Monte-Carlo sweep over seeds with plots")
    common(sp)
    sp = sub.add_parser("sweep-rho", help="Monte-Carlo sweep over appearance probabilities")
    common(sp)
    sp.add_argument("--rho-list", help="comma-separated appearance probabilities")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "runs": args.runs,
        "out_dir": args.out,
        "scenario": args.scenario,
        "p_detect": args.pd,
        "rho": args.rho,
    }
    if getattr(args, "rho_list", None):
        overrides["rho_list"] = args.rho_list
    try:
        cfg = fileio.load_config(args.config, overrides)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "track":
            return cmd_track(cfg, args.frames)
        if args.command == "eval":
            return cmd_eval(cfg, args.estimates, args.truth)
        if args.command == "mc":
            return cmd_mc(cfg)
        if args.command == "sweep-rho":
            return cmd_sweep_rho(cfg)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
