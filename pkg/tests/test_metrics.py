import itertools
import math

import numpy as np
import pytest

from ettrack.metrics import GospaBreakdown, NonPsdInputError, gospa, gwd


def brute_force_gospa(est, truth, c=20.0):
    """Enumerate all partial assignments (truth_i -> est_j or unassigned)."""
    nt, ne = len(truth), len(est)
    best = math.inf
    for k in range(min(nt, ne) + 1):
        for t_sub in itertools.combinations(range(nt), k):
            for e_sub in itertools.permutations(range(ne), k):
                cost = sum(
                    min(gwd(truth[i][0], truth[i][1], est[j][0], est[j][1]), c)
                    for i, j in zip(t_sub, e_sub)
                )
                cost += (c / 2.0) * ((nt - k) + (ne - k))
                best = min(best, cost)
    return best


def random_components(rng, n):
    out = []
    for _ in range(n):
        m = rng.uniform(-30, 30, 2)
        a = rng.uniform(0.5, 6.0, (2, 2))
        out.append((m, a @ a.T))
    return out


class TestGwd:
    def test_identity(self):
        m = np.array([1.0, 2.0])
        x = np.array([[4.0, 1.0], [1.0, 3.0]])
        assert gwd(m, x, m, x) == pytest.approx(0.0, abs=1e-12)

    def test_equal_covariances(self):
        assert gwd([0.0, 0.0], np.eye(2), [3.0, 4.0], np.eye(2)) == pytest.approx(5.0, rel=1e-12)

    def test_commuting_case(self):
        got = gwd([0.0, 0.0], 4.0 * np.eye(2), [0.0, 0.0], np.eye(2))
        assert got == pytest.approx(math.sqrt(2.0), rel=1e-12)

    def test_non_psd(self):
        with pytest.raises(NonPsdInputError):
            gwd([0.0, 0.0], -np.eye(2), [0.0, 0.0], np.eye(2))

    def test_symmetry(self, rng):
        a, b = random_components(rng, 2)
        assert gwd(*a, *b) == pytest.approx(gwd(*b, *a), rel=1e-10)


class TestGospa:
    def test_empty(self):
        out = gospa([], [])
        assert out == GospaBreakdown(0.0, 0.0, 0.0, 0.0)

    def test_missed_only(self):
        truth = [(np.zeros(2), np.eye(2))]
        out = gospa([], truth)
        assert out.missed == pytest.approx(10.0)
        assert out.total == pytest.approx(10.0)
        assert out.localization == 0.0 and out.false == 0.0

    def test_single_pair(self):
        truth = [(np.zeros(2), np.eye(2))]
        est = [(np.array([3.0, 0.0]), np.eye(2))]
        out = gospa(est, truth)
        assert out.localization == pytest.approx(3.0)
        assert out.total == pytest.approx(3.0)

    def test_cutoff_prefers_unassignment(self):
        truth = [(np.zeros(2), np.eye(2))]
        est = [(np.array([50.0, 0.0]), np.eye(2))]
        out = gospa(est, truth)
        assert out.localization == 0.0
        assert out.missed == pytest.approx(10.0)
        assert out.false == pytest.approx(10.0)
        assert out.total == pytest.approx(20.0)

    def test_swap_symmetry(self, rng):
        est = random_components(rng, 3)
        truth = random_components(rng, 5)
        a = gospa(est, truth)
        b = gospa(truth, est)
        assert a.total == pytest.approx(b.total, rel=1e-10)
        assert a.missed == pytest.approx(b.false, rel=1e-10)
        assert a.false == pytest.approx(b.missed, rel=1e-10)

    def test_self_distance_zero(self, rng):
        xs = random_components(rng, 4)
        out = gospa(xs, xs)
        assert out.total == pytest.approx(0.0, abs=1e-9)

    def test_decomposition_sums(self, rng):
        for _ in range(20):
            est = random_components(rng, int(rng.integers(0, 5)))
            truth = random_components(rng, int(rng.integers(0, 5)))
            out = gospa(est, truth)
            assert out.total == pytest.approx(
                out.localization + out.missed + out.false, abs=1e-9
            )

    def test_matches_brute_force(self, rng):
        for _ in range(40):
            ne = int(rng.integers(0, 7))
            nt = int(rng.integers(0, 7))
            # mix of near and far components so cutoffs engage
            est = random_components(rng, ne)
            truth = random_components(rng, nt)
            got = gospa(est, truth)
            want = brute_force_gospa(est, truth)
            assert got.total == pytest.approx(want, rel=1e-10, abs=1e-10)
