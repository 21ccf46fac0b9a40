import numpy as np
import pytest

from ettrack.assoc_bp import AssocProblem, LegacyEntry, NewEntry
from ettrack.oracle import OracleLegacy, OracleNew, TinyProblem


def random_problem(
    rng: np.random.Generator,
    n_legacy: int,
    n_new: int,
    num_meas: int,
    rho: float,
    max_cap: int = 3,
    p_detect: float | None = None,
    birth_rate: float | None = None,
    dead_tracks: bool = False,
    allow_degenerate: bool = True,
):
    """Draw a random association problem plus the matching enumeration problem."""
    p_d = float(rng.uniform(0.3, 0.98)) if p_detect is None else p_detect
    lam = float(rng.uniform(0.2, 2.0)) if birth_rate is None else birth_rate
    legacy, olegacy, rows = [], [], []
    for _ in range(n_legacy):
        p1 = 0.0 if (dead_tracks and rng.random() < 0.3) else float(rng.uniform(0.05, 1.0))
        alpha = float(rng.uniform(0.5, 30.0))
        beta = float(rng.uniform(0.2, 5.0))
        cap = int(rng.integers(1, max_cap + 1))
        cg = float(rng.uniform(0.9, 1.3))
        ratios = rng.lognormal(0.0, 1.0, size=num_meas)
        legacy.append(LegacyEntry(p1=p1, p0=1.0 - p1, alpha=alpha, beta=beta, cap=cap, c_gamma=cg))
        olegacy.append(OracleLegacy(p1=p1, alpha=alpha, beta=beta, cap=cap, c_gamma=cg, ratios=ratios))
        rows.append(np.concatenate([[1.0], ratios]))
    new, onew, nrows = [], [], []
    if n_new:
        # hi bounds the anchor so each new track can reach >= num_meas - hi + 1
        # measurements; the rescaled representation is degenerate for anchors at
        # the last index (single admissible measurement), which some tests avoid.
        hi = num_meas if allow_degenerate else num_meas - 1
        idxs = sorted(rng.choice(hi, size=min(n_new, hi), replace=False).tolist())
        for j in idxs:
            alpha = float(rng.uniform(0.5, 30.0))
            beta = float(rng.uniform(0.2, 5.0))
            cap = int(rng.integers(1, max_cap + 1))
            cg = float(rng.uniform(0.9, 1.3))
            ratios = rng.lognormal(0.0, 1.0, size=num_meas)
            ratios[:j] = 0.0
            new.append(NewEntry(meas_idx=j, alpha=alpha, beta=beta, cap=cap, c_gamma=cg))
            onew.append(OracleNew(meas_idx=j, alpha=alpha, beta=beta, cap=cap, c_gamma=cg, ratios=ratios))
            nrows.append(lam * ratios)
    problem = AssocProblem(
        num_meas=num_meas,
        p_detect=p_d,
        birth_rate=lam,
        rho_phi=rho,
        legacy=tuple(legacy),
        legacy_mf=np.array(rows).reshape(n_legacy, num_meas + 1),
        new=tuple(new),
        new_mf=np.array(nrows).reshape(len(new), num_meas),
    )
    tiny = TinyProblem(
        num_meas=num_meas,
        p_detect=p_d,
        birth_rate=lam,
        legacy=tuple(olegacy),
        new=tuple(onew),
    )
    return problem, tiny


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
