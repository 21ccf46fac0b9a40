import numpy as np
import pytest

from ettrack.models import SensorModel
from ettrack.sim import REGION, generate_measurements, make_scenario, ncv_motion


def default_sensor(p_d=0.95, clutter=10.0):
    return SensorModel(
        H=np.hstack([np.eye(2), np.zeros((2, 2))]),
        R=np.eye(2),
        s=0.25,
        p_detect=p_d,
        clutter_rate=clutter,
        region_area=160000.0,
    )


class TestScenarios:
    def test_scenario_one_layout(self):
        truth = make_scenario(1, seed=7)
        assert len(truth.targets) == 10
        assert truth.num_steps == 100
        for t in truth.targets:
            assert np.hypot(*t.states[0, :2]) == pytest.approx(75.0)
            v = t.states[0, 2:]
            assert np.hypot(*v) == pytest.approx(10.0)
            # velocity points toward the center
            assert np.dot(v, t.states[0, :2]) < 0

    def test_scenario_two_layout(self):
        truth = make_scenario(2, seed=3)
        assert len(truth.targets) == 40
        centers = np.array([[-50, -50], [-50, 50], [50, -50], [50, 50], [0, 0]], dtype=float)
        for i, t in enumerate(truth.targets):
            c = centers[i // 8]
            off = t.states[0, :2] - c
            assert np.hypot(*off) == pytest.approx(20.0)
            assert np.hypot(*t.states[0, 2:]) == pytest.approx(5.0)
            assert np.dot(t.states[0, 2:], off) > 0  # outward

    def test_determinism(self):
        a = make_scenario(1, seed=11)
        b = make_scenario(1, seed=11)
        for ta, tb in zip(a.targets, b.targets):
            np.testing.assert_array_equal(ta.states, tb.states)
            np.testing.assert_array_equal(ta.extent, tb.extent)

    def test_extent_statistics(self):
        # sampled extents have mean diag(64, 36) over many draws
        exts = np.array([t.extent for s in range(30) for t in make_scenario(2, seed=s).targets])
        mean = exts.mean(axis=0)
        assert mean[0, 0] == pytest.approx(64.0, rel=0.15)
        assert mean[1, 1] == pytest.approx(36.0, rel=0.15)


class TestMeasurements:
    def test_counts(self):
        truth = make_scenario(1, seed=5, num_steps=100)
        frames = generate_measurements(truth, default_sensor(), seed=5)
        counts = np.array([len(f.measurements) for f in frames])
        # 10 targets * 10 * 0.95 + 10 clutter
        assert counts.mean() == pytest.approx(105.0, rel=0.08)

    def test_no_detections_only_clutter(self):
        truth = make_scenario(1, seed=5, num_steps=50)
        sensor = SensorModel(
            H=np.hstack([np.eye(2), np.zeros((2, 2))]),
            R=np.eye(2),
            s=0.25,
            p_detect=1e-12,
            clutter_rate=10.0,
            region_area=160000.0,
        )
        frames = generate_measurements(truth, sensor, seed=9)
        counts = np.array([len(f.measurements) for f in frames])
        assert counts.mean() == pytest.approx(10.0, rel=0.35)

    def test_trajectories_independent_of_detection(self):
        t1 = make_scenario(1, seed=70)
        generate_measurements(t1, default_sensor(p_d=0.95), seed=70)
        t2 = make_scenario(1, seed=70)
        generate_measurements(t2, default_sensor(p_d=0.5), seed=70)
        for a, b in zip(t1.targets, t2.targets):
            np.testing.assert_array_equal(a.states, b.states)

    def test_in_region_clutter(self):
        truth = make_scenario(1, seed=2, num_steps=20)
        frames = generate_measurements(truth, default_sensor(), seed=2)
        x_lo, x_hi, y_lo, y_hi = REGION
        # targets live well inside the region; allow the gaussian tails some slack
        for f in frames:
            if len(f.measurements):
                assert f.measurements[:, 0].min() > x_lo - 50
                assert f.measurements[:, 0].max() < x_hi + 50

    def test_spatial_covariance(self):
        # single static target, many steps: empirical covariance ~ sE + R
        from ettrack.sim import GroundTruth, TargetTruth

        extent = np.diag([64.0, 36.0])
        states = np.zeros((400, 4))
        truth = GroundTruth(
            num_steps=400,
            targets=(
                TargetTruth(0, 0, 400, states, extent, rate=40.0),
            ),
        )
        sensor = default_sensor(p_d=1.0, clutter=0.0)
        frames = generate_measurements(truth, sensor, seed=123)
        z = np.concatenate([f.measurements for f in frames])
        emp = np.cov(z.T)
        want = sensor.s * extent + sensor.R
        assert np.linalg.norm(emp - want) / np.linalg.norm(want) < 0.05

    def test_poisson_rate(self):
        from ettrack.sim import GroundTruth, TargetTruth

        states = np.zeros((2000, 4))
        truth = GroundTruth(
            num_steps=2000,
            targets=(TargetTruth(0, 0, 2000, states, np.diag([64.0, 36.0]), rate=10.0),),
        )
        sensor = default_sensor(p_d=0.95, clutter=0.0)
        frames = generate_measurements(truth, sensor, seed=77)
        counts = np.array([len(f.measurements) for f in frames])
        # mean count = p_D * gamma; CI at 3 sigma
        se = counts.std() / np.sqrt(len(counts))
        assert abs(counts.mean() - 9.5) < 3 * se + 0.05
