import numpy as np
import pytest

from padloc.radar import ChirpConfig, preliminary_location
from padloc.simulate import (EVENT_LABELS, InfeasibleSpec, RADAR_LABELS,
                             SceneConfig, TrajectorySpec, classify_speed,
                             default_calibration, distractor_scene,
                             generate_trajectory, read_scenario, render_events,
                             render_radar, simulate_scenario, write_scenario,
                             zero_noise_scene)

CALIB = default_calibration()
CHIRP = ChirpConfig()


class TestSpeedClasses:
    def test_classification(self):
        assert classify_speed(0.2) == "slow"
        assert classify_speed(0.7) == "medium"
        assert classify_speed(1.2) == "rapid"

    def test_out_of_range(self):
        with pytest.raises(InfeasibleSpec):
            classify_speed(2.0)

    def test_peak_speed_must_stay_in_class(self):
        # nominal 0.45 in 'slow' but the ramp peak crosses the 0.5 bound
        with pytest.raises(InfeasibleSpec):
            TrajectorySpec(speed=0.45)

    def test_explicit_class_checked(self):
        with pytest.raises(InfeasibleSpec):
            TrajectorySpec(speed=0.3, speed_class="medium")


class TestTrajectory:
    def test_endpoints(self):
        spec = TrajectorySpec(kind="vertical", start=(0.3, -0.2, 8.0),
                              end=(0.1, 0.05, 2.0), speed=0.4)
        ts, pos = generate_trajectory(spec)
        assert np.allclose(pos[0], spec.start)
        assert np.allclose(pos[-1], spec.end, atol=1e-9)

    def test_time_monotone_at_update_rate(self):
        spec = TrajectorySpec(speed=0.4)
        ts, pos = generate_trajectory(spec)
        d = np.diff(ts)
        assert (d > 0).all()
        assert np.allclose(d, 1e6 / spec.update_rate)

    def test_speed_profile_bounds(self):
        spec = TrajectorySpec(kind="vertical", start=(0.3, -0.2, 8.0),
                              end=(0.1, 0.05, 2.0), speed=0.4,
                              ramp_fraction=0.1)
        ts, pos = generate_trajectory(spec)
        v = np.linalg.norm(np.diff(pos, axis=0), axis=1) / np.diff(ts) * 1e6
        peak = spec.speed / (1.0 - spec.ramp_fraction)
        assert v.max() <= peak + 1e-6
        # cruise phase holds the peak speed of the trapezoid profile
        assert v.max() >= 0.95 * peak

    def test_approach_descend_passes_knee(self):
        spec = TrajectorySpec(kind="approach_descend", start=(2.0, 0.0, 6.0),
                              end=(0.0, 0.0, 2.0), speed=0.4)
        ts, pos = generate_trajectory(spec)
        # lateral motion completes before the descent starts
        knee = np.array([0.0, 0.0, 6.0])
        d = np.linalg.norm(pos - knee, axis=1)
        assert d.min() < 0.05

    def test_square_spiral_needs_offset(self):
        with pytest.raises(InfeasibleSpec):
            generate_trajectory(TrajectorySpec(kind="square_spiral",
                                               start=(0.0, 0.0, 5.0),
                                               end=(0.0, 0.0, 5.0), speed=0.4))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_trajectory(TrajectorySpec(kind="corkscrew", speed=0.3))


class TestDeterminism:
    def test_same_seed_identical(self):
        spec = TrajectorySpec(kind="vertical", start=(0.2, -0.1, 4.0),
                              end=(0.1, 0.05, 3.0), speed=0.4)
        a = simulate_scenario(spec, SceneConfig(), CHIRP, CALIB, 9)
        b = simulate_scenario(spec, SceneConfig(), CHIRP, CALIB, 9)
        assert a.events.tobytes() == b.events.tobytes()
        assert np.array_equal(a.event_labels, b.event_labels)
        assert len(a.radar) == len(b.radar)
        for da, db in zip(a.radar, b.radar):
            assert da.distance == db.distance
            assert np.array_equal(da.direction, db.direction)

    def test_different_seed_differs(self):
        spec = TrajectorySpec(kind="vertical", start=(0.2, -0.1, 4.0),
                              end=(0.1, 0.05, 3.0), speed=0.4)
        a = simulate_scenario(spec, SceneConfig(), CHIRP, CALIB, 1)
        b = simulate_scenario(spec, SceneConfig(), CHIRP, CALIB, 2)
        assert a.events.tobytes() != b.events.tobytes()


@pytest.fixture(scope="module")
def short_streams():
    spec = TrajectorySpec(kind="vertical", start=(0.2, -0.1, 4.0),
                          end=(0.1, 0.05, 2.5), speed=0.4)
    return (simulate_scenario(spec, SceneConfig(), CHIRP, CALIB, 4),
            generate_trajectory(spec))


class TestLabels:
    def test_event_labels_valid_and_aligned(self, short_streams):
        s, _ = short_streams
        assert len(s.events) == len(s.event_labels)
        assert set(np.unique(s.event_labels)) <= set(EVENT_LABELS.values())
        # default scene: no distractors or shadows
        assert EVENT_LABELS["distractor"] not in s.event_labels
        assert EVENT_LABELS["shadow"] not in s.event_labels

    def test_radar_labels(self, short_streams):
        s, _ = short_streams
        assert len(s.radar) == len(s.radar_labels)
        assert set(np.unique(s.radar_labels)) <= set(RADAR_LABELS.values())
        assert (s.radar_labels == RADAR_LABELS["drone"]).sum() >= len(
            s.truth_ts) - 1

    def test_events_time_sorted(self, short_streams):
        s, _ = short_streams
        assert (np.diff(s.events["t"].astype(np.int64)) >= 0).all()

    def test_distractor_scene_emits_distractors(self):
        spec = TrajectorySpec(kind="vertical", start=(0.2, -0.1, 4.0),
                              end=(0.1, 0.05, 3.0), speed=0.4)
        s = simulate_scenario(spec, distractor_scene(), CHIRP, CALIB, 4)
        assert EVENT_LABELS["distractor"] in s.event_labels
        assert EVENT_LABELS["shadow"] in s.event_labels
        assert RADAR_LABELS["distractor"] in s.radar_labels


class TestNoiseStatistics:
    def test_range_noise_calibrated(self, short_streams):
        s, (ts, pos) = short_streams
        t_er = CALIB.t_ER.translation
        resid = []
        by_ts = {int(t): p for t, p in zip(ts, pos)}
        for det, lab in zip(s.radar, s.radar_labels):
            if lab != RADAR_LABELS["drone"]:
                continue
            true_d = np.linalg.norm(by_ts[det.timestamp] - t_er)
            resid.append(det.distance - true_d)
        resid = np.array(resid)
        scene = SceneConfig()
        assert abs(resid.mean()) < 3 * scene.range_noise / np.sqrt(len(resid))
        assert 0.8 * scene.range_noise < resid.std() < 1.2 * scene.range_noise

    def test_shot_noise_rate(self):
        spec = TrajectorySpec(kind="vertical", start=(0.2, -0.1, 4.0),
                              end=(0.1, 0.05, 3.0), speed=0.4)
        ts, pos = generate_trajectory(spec)
        scene = SceneConfig(propeller_rate_per_px=0.0,
                            body_edge_events_per_px=0.0)
        ev, lab = render_events(ts, pos, scene, CALIB.intrinsics, CALIB, 6)
        duration = (ts[-1] - ts[0]) * 1e-6
        expected = scene.shot_noise_rate * duration
        assert abs(len(ev) - expected) < 5 * np.sqrt(expected)

    def test_zero_noise_radar_closes_geometrically(self):
        spec = TrajectorySpec(kind="vertical", start=(0.2, -0.1, 4.0),
                              end=(0.1, 0.05, 3.0), speed=0.4)
        ts, pos = generate_trajectory(spec)
        dets, labs = render_radar(ts, pos, zero_noise_scene(), CHIRP, CALIB, 7)
        t_er = CALIB.t_ER.translation
        for k, det in enumerate(dets):
            p = preliminary_location(det.distance, det.direction, t_er)
            assert np.allclose(p, pos[k + 1], atol=1e-9)


class TestSceneValidation:
    def test_rejects_bad_extent(self):
        with pytest.raises(ValueError):
            SceneConfig(drone_extent=(0.0, 0.1, 0.1))

    def test_rejects_negative_rates(self):
        with pytest.raises(ValueError):
            SceneConfig(shot_noise_rate=-1.0)

    def test_out_of_fov_warning(self):
        spec = TrajectorySpec(kind="vertical", start=(30.0, 0.0, 4.0),
                              end=(30.0, 0.0, 3.0), speed=0.4)
        ts, pos = generate_trajectory(spec)
        with pytest.warns(UserWarning):
            render_events(ts, pos, SceneConfig(), CALIB.intrinsics, CALIB, 0)


def test_scenario_roundtrip(tmp_path, short_streams):
    s, _ = short_streams
    d = tmp_path / "scen"
    write_scenario(d, s, meta={"note": "test"})
    back = read_scenario(d)
    assert back.events.tobytes() == s.events.tobytes()
    assert np.array_equal(back.event_labels, s.event_labels)
    assert np.array_equal(back.radar_labels, s.radar_labels)
    assert np.array_equal(back.truth_ts, s.truth_ts)
    assert np.array_equal(back.truth_pos, s.truth_pos)
    assert len(back.radar) == len(s.radar)
    assert back.radar[0].distance == s.radar[0].distance


def test_missing_stream(tmp_path):
    from padloc.simulate import MissingStream
    with pytest.raises(MissingStream):
        read_scenario(tmp_path)
