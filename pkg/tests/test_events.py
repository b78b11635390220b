import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from padloc.events import (EVENT_DTYPE, Cluster, GridConfig,
                           SurfaceOfActiveEvents, TwoStageFilter, grid_cluster,
                           iou, make_events, neighbor_filter_mask,
                           read_events_bin, read_events_csv, write_events_bin,
                           write_events_csv)

RES = (32, 24)


def brute_force_neighbor_mask(events, t_n, resolution):
    """O(n^2) oracle: an event survives iff some earlier event (stream order)
    at one of its 8 neighboring pixels is at most t_n microseconds old."""
    keep = np.zeros(len(events), dtype=bool)
    for i in range(len(events)):
        xi, yi, ti = int(events["x"][i]), int(events["y"][i]), int(events["t"][i])
        best = None
        for j in range(i):
            xj, yj = int(events["x"][j]), int(events["y"][j])
            if (xj, yj) == (xi, yi):
                continue
            if abs(xj - xi) <= 1 and abs(yj - yi) <= 1:
                tj = int(events["t"][j])
                best = tj if best is None else max(best, tj)
        keep[i] = best is not None and ti - best <= t_n
    return keep


def random_events(rng, n, res=RES, t_max=20000):
    w, h = res
    return make_events(rng.integers(0, w, n), rng.integers(0, h, n),
                       np.sort(rng.integers(0, t_max, n)),
                       rng.choice([-1, 1], n))


class TestNeighborFilter:
    def test_against_brute_force(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            ev = random_events(rng, 120, res=(8, 8), t_max=8000)
            got = neighbor_filter_mask(ev, 2000, (8, 8))
            want = brute_force_neighbor_mask(ev, 2000, (8, 8))
            assert np.array_equal(got, want)

    def test_isolated_event_dropped(self):
        ev = make_events([5], [5], [100], [1])
        assert not neighbor_filter_mask(ev, 2000, RES).any()

    def test_neighbor_within_window_kept(self):
        ev = make_events([5, 6], [5, 5], [100, 1500], [1, 1])
        assert list(neighbor_filter_mask(ev, 2000, RES)) == [False, True]

    def test_neighbor_outside_window_dropped(self):
        ev = make_events([5, 6], [5, 5], [100, 5000], [1, 1])
        assert list(neighbor_filter_mask(ev, 2000, RES)) == [False, False]

    def test_same_pixel_not_a_neighbor(self):
        ev = make_events([5, 5], [5, 5], [100, 200], [1, 1])
        assert not neighbor_filter_mask(ev, 2000, RES).any()

    def test_border_pixels(self):
        w, h = RES
        ev = make_events([0, 1, w - 1, w - 2], [0, 0, h - 1, h - 1],
                         [0, 10, 20, 30], [1, 1, 1, 1])
        mask = neighbor_filter_mask(ev, 2000, RES)
        assert list(mask) == [False, True, False, True]


class TestSAE:
    def test_first_event_kept(self):
        sae = SurfaceOfActiveEvents(RES, 1000)
        assert sae.update(3, 3, 100, 1)

    def test_redundant_same_polarity_dropped(self):
        sae = SurfaceOfActiveEvents(RES, 1000)
        sae.update(3, 3, 100, 1)
        assert not sae.update(3, 3, 600, 1)

    def test_kept_after_window(self):
        sae = SurfaceOfActiveEvents(RES, 1000)
        sae.update(3, 3, 100, 1)
        assert sae.update(3, 3, 1200, 1)

    def test_polarity_flip_kept(self):
        sae = SurfaceOfActiveEvents(RES, 1000)
        sae.update(3, 3, 100, 1)
        assert sae.update(3, 3, 300, -1)

    def test_t_r_only_advances_on_kept(self):
        sae = SurfaceOfActiveEvents(RES, 1000)
        sae.update(3, 3, 100, 1)
        sae.update(3, 3, 600, 1)
        assert sae.t_r[0, 3, 3] == 100
        assert sae.t_l[0, 3, 3] == 600


class TestTwoStageFilter:
    def reference(self, events, t_n, t_k, res):
        """Stage 1 on the raw stream; stage 2 sees only stage-1 survivors."""
        mask1 = neighbor_filter_mask(events, t_n, res)
        sae = SurfaceOfActiveEvents(res, t_k)
        out = np.zeros(len(events), dtype=bool)
        for i in np.flatnonzero(mask1):
            out[i] = sae.update(int(events["x"][i]), int(events["y"][i]),
                                int(events["t"][i]), int(events["p"][i]))
        return out

    def test_against_reference(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            ev = random_events(rng, 400, res=(12, 10), t_max=15000)
            f = TwoStageFilter((12, 10), 2000, 800)
            assert np.array_equal(f.process(ev), self.reference(ev, 2000, 800,
                                                                (12, 10)))

    def test_chunked_equals_single_pass(self):
        rng = np.random.default_rng(6)
        ev = random_events(rng, 600, res=(16, 16))
        whole = TwoStageFilter((16, 16), 2000, 500).process(ev)
        chunked = TwoStageFilter((16, 16), 2000, 500)
        parts = [chunked.process(ev[i:i + 100]) for i in range(0, 600, 100)]
        assert np.array_equal(whole, np.concatenate(parts))

    def test_empty_input(self):
        f = TwoStageFilter(RES, 2000, 500)
        assert len(f.process(np.empty(0, dtype=EVENT_DTYPE))) == 0


class TestGridCluster:
    CFG = GridConfig(cell_width=4, cell_height=4, activation_threshold=3)

    def _burst(self, x, y, n, t0=0):
        return make_events(np.full(n, x), np.full(n, y),
                           t0 + np.arange(n), np.ones(n))

    def test_single_cluster(self):
        ev = self._burst(5, 6, 5)
        out = grid_cluster(ev, self.CFG, RES)
        assert len(out) == 1
        c = out[0]
        assert (c.x_min, c.y_min, c.x_max, c.y_max) == (5, 6, 5, 6)
        assert c.count == 5
        assert c.centroid == (5.0, 6.0)

    def test_below_threshold_ignored(self):
        assert grid_cluster(self._burst(5, 6, 2), self.CFG, RES) == []

    def test_two_separate_clusters_sorted(self):
        ev = np.concatenate([self._burst(20, 20, 4), self._burst(2, 2, 4, t0=10)])
        ev = ev[np.argsort(ev["t"], kind="stable")]
        out = grid_cluster(ev, self.CFG, RES)
        assert len(out) == 2
        assert (out[0].x_min, out[0].y_min) == (2, 2)
        assert (out[1].x_min, out[1].y_min) == (20, 20)

    def test_adjacent_cells_merge(self):
        # cells (1,1) and (2,1) are 4-connected -> one component
        ev = np.concatenate([self._burst(5, 5, 3), self._burst(9, 5, 3, t0=10)])
        ev = ev[np.argsort(ev["t"], kind="stable")]
        out = grid_cluster(ev, self.CFG, RES)
        assert len(out) == 1
        assert out[0].count == 6
        assert (out[0].x_min, out[0].x_max) == (5, 9)

    def test_diagonal_cells_do_not_merge(self):
        ev = np.concatenate([self._burst(5, 5, 3), self._burst(9, 9, 3, t0=10)])
        ev = ev[np.argsort(ev["t"], kind="stable")]
        assert len(grid_cluster(ev, self.CFG, RES)) == 2

    def test_counts_conserved(self):
        rng = np.random.default_rng(9)
        ev = random_events(rng, 300)
        out = grid_cluster(ev, self.CFG, RES)
        # members of active cells are counted exactly once across clusters
        w, h = RES
        cx = ev["x"].astype(int) // self.CFG.cell_width
        cy = ev["y"].astype(int) // self.CFG.cell_height
        n_cx = (w + 3) // 4
        counts = np.bincount(cy * n_cx + cx,
                             minlength=n_cx * ((h + 3) // 4))
        active_events = sum(
            int(c) for c in counts if c >= self.CFG.activation_threshold)
        assert sum(c.count for c in out) == active_events

    def test_bbox_contains_members(self):
        c = Cluster(x_min=2, y_min=3, x_max=6, y_max=9, count=4,
                    centroid=(4.0, 6.0))
        cx, cy, w, h = c.bbox
        assert (cx, cy, w, h) == (4.0, 6.0, 5.0, 7.0)
        assert c.corners == (2.0, 3.0, 7.0, 10.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GridConfig(cell_width=0)


box = st.tuples(st.floats(-50, 50), st.floats(-50, 50),
                st.floats(1, 40), st.floats(1, 40))


class TestIou:
    @given(box)
    def test_self_iou_is_one(self, b):
        assert iou(b, b) == pytest.approx(1.0)

    @given(box, box)
    @settings(max_examples=200)
    def test_symmetric_and_bounded(self, a, b):
        ab, ba = iou(a, b), iou(b, a)
        assert ab == pytest.approx(ba)
        assert 0.0 <= ab <= 1.0 + 1e-12

    def test_disjoint(self):
        assert iou((0, 0, 2, 2), (10, 10, 2, 2)) == 0.0

    def test_half_overlap(self):
        # two unit-height boxes sharing half their width
        assert iou((0, 0, 2, 1), (1, 0, 2, 1)) == pytest.approx(1.0 / 3.0)


def test_bin_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(1)
    ev = random_events(rng, 500)
    path = tmp_path / "ev.bin"
    write_events_bin(path, ev)
    back = read_events_bin(path)
    assert back.tobytes() == ev.tobytes()


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    ev = random_events(rng, 50)
    path = tmp_path / "ev.csv"
    write_events_csv(path, ev)
    back = read_events_csv(path)
    assert np.array_equal(back, ev)
