import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evgaze.core import CentroidTrack, EventStream, GrayscaleFrame, SensorGeometry
from evgaze.encoder import (
    ColorCode,
    EncodingConfig,
    blank_frame,
    encode_bin,
    eta_color,
    frame_from_gray,
    fuse_sequence,
    make_sample_pairs,
    nearest_gray,
)

GEOM = SensorGeometry(8, 8)
CODE = ColorCode(alpha=5.0)

# frozen evaluations of the channel exponentials
ETA_EXPECTED = {
    (1.0, 0.0): (1.0, 1.0, 0.36787944117144233),
    (1.0, 0.5): (0.6065306597126334, 0.8451818782538245, 0.6065306597126334),
    (1.0, 1.0): (0.36787944117144233, 1.0, 1.0),
    (5.0, 0.0): (1.0, 0.9999999999999999, 0.006737946999085467),
    (5.0, 0.5): (0.0820849986238988, 0.15743205024871212, 0.0820849986238988),
    (5.0, 1.0): (0.006737946999085467, 0.9999999999999999, 1.0),
}


def make_stream(rows):
    """rows: list of (x, y, t, p), already time-sorted."""
    if not rows:
        return EventStream.empty(GEOM)
    xs, ys, ts, ps = zip(*rows)
    return EventStream(np.asarray(xs), np.asarray(ys), np.asarray(ts), np.asarray(ps), GEOM)


class TestEtaColor:
    @pytest.mark.parametrize("alpha,t", sorted(ETA_EXPECTED))
    def test_frozen_values(self, alpha, t):
        r, g, b = eta_color(t, ColorCode(alpha=alpha))
        er, eg, eb = ETA_EXPECTED[(alpha, t)]
        assert abs(r - er) < 1e-12
        assert abs(g - eg) < 1e-12
        assert abs(b - eb) < 1e-12

    def test_domain_error(self):
        with pytest.raises(ValueError):
            eta_color(1.5, CODE)
        with pytest.raises(ValueError):
            eta_color(-0.1, CODE)

    def test_monotonicity_and_range(self):
        grid = np.linspace(0.0, 1.0, 1000)
        vals = np.array([eta_color(t, CODE) for t in grid])
        r, g, b = vals[:, 0], vals[:, 1], vals[:, 2]
        assert np.all(np.diff(r) < 0)
        assert np.all(np.diff(b) > 0)
        assert np.all(vals > 0.0) and np.all(vals <= 1.0)
        assert g[0] == pytest.approx(1.0) and g[-1] == pytest.approx(1.0)


class TestEncodeBin:
    def test_empty_is_identity(self):
        base = frame_from_gray(GrayscaleFrame(0, np.full((8, 8), 0.25)))
        out = encode_bin(make_stream([]), base, CODE)
        np.testing.assert_array_equal(out.channels, base.channels)

    def test_single_on_event(self):
        base = blank_frame(GEOM)
        out = encode_bin(make_stream([(3, 4, 100, 1)]), base, CODE)
        r, g, b = eta_color(0.0, CODE)  # lone event normalizes to t = 0
        assert out.channels[3, 4, 3] == pytest.approx(r, abs=1e-7)
        assert out.channels[4, 4, 3] == pytest.approx(g, abs=1e-7)
        assert out.channels[5, 4, 3] == pytest.approx(b, abs=1e-7)
        assert np.all(out.channels[0:3] == 0.0)

    def test_last_write_wins(self):
        base = blank_frame(GEOM)
        out = encode_bin(make_stream([(2, 2, 10, 1), (2, 2, 20, 1)]), base, CODE)
        r, g, b = eta_color(1.0, CODE)
        assert out.channels[3, 2, 2] == pytest.approx(r, abs=1e-7)
        assert out.channels[5, 2, 2] == pytest.approx(b, abs=1e-7)

    def test_polarities_do_not_collide(self):
        base = blank_frame(GEOM)
        out = encode_bin(make_stream([(2, 2, 0, 0), (2, 2, 50, 1)]), base, CODE)
        r0, _, b0 = eta_color(0.0, CODE)
        r1, _, b1 = eta_color(1.0, CODE)
        assert out.channels[0, 2, 2] == pytest.approx(r0, abs=1e-7)
        assert out.channels[3, 2, 2] == pytest.approx(r1, abs=1e-7)

    @given(st.permutations(list(range(5))))
    @settings(max_examples=20)
    def test_permutation_invariant_at_distinct_pixels(self, order):
        # distinct pixels: event order within the bin cannot matter
        rows = [(i, i, 10 * i, 1) for i in range(5)]
        base = blank_frame(GEOM)
        ref = encode_bin(make_stream(rows), base, CODE)
        shuffled = [rows[i] for i in order]
        shuffled.sort(key=lambda r: r[2])  # stream must stay time-sorted
        out = encode_bin(make_stream(shuffled), base, CODE)
        np.testing.assert_array_equal(ref.channels, out.channels)

    def test_deterministic(self):
        rows = [(1, 1, 5, 0), (2, 3, 9, 1), (1, 1, 12, 0)]
        base = frame_from_gray(GrayscaleFrame(0, np.full((8, 8), 0.5)))
        a = encode_bin(make_stream(rows), base, CODE)
        b = encode_bin(make_stream(rows), base, CODE)
        np.testing.assert_array_equal(a.channels, b.channels)


class TestNearestGray:
    FRAMES = [GrayscaleFrame(0, np.zeros((8, 8))), GrayscaleFrame(500_000, np.zeros((8, 8)))]

    def test_closer_to_first(self):
        assert nearest_gray(self.FRAMES, 120_000) == 0

    def test_closer_to_second(self):
        assert nearest_gray(self.FRAMES, 400_000) == 1

    def test_tie_breaks_earlier(self):
        assert nearest_gray(self.FRAMES, 250_000) == 0

    def test_linear_scan_oracle(self):
        ts = [0, 100, 300, 700, 1500]
        frames = [GrayscaleFrame(t, np.zeros((8, 8))) for t in ts]
        for q in range(0, 1600, 7):
            best = min(range(len(ts)), key=lambda i: (abs(ts[i] - q), i))
            assert nearest_gray(frames, q) == best

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            nearest_gray([], 0)


def uniform_truth(n, period=33_000):
    ts = np.arange(1, n + 1, dtype=np.int64) * period
    return CentroidTrack(ts, np.full(n, 4.0), np.full(n, 4.0))


class TestFuseSequence:
    def test_emitted_count(self):
        # 1 s recording, gray at 0 / 0.5 / 1.0 s, 33 ms bins: 15 + 15 + 0 frames
        gray = [GrayscaleFrame(t, np.full((8, 8), 0.3)) for t in (0, 500_000, 1_000_000)]
        events = make_stream([(1, 1, 999_999, 1)])
        seq = fuse_sequence(events, gray, uniform_truth(30), EncodingConfig())
        assert len(seq) == 30
        assert len(seq.centroids) == 30

    def test_zero_events_reproduce_gray(self):
        gray = [GrayscaleFrame(t, np.full((8, 8), 0.4)) for t in (0, 500_000, 1_000_000)]
        seq = fuse_sequence(make_stream([]), gray, uniform_truth(30), EncodingConfig())
        assert len(seq) == 30
        for i, frame in enumerate(seq.frames):
            base = gray[0] if i < 15 else gray[1]
            np.testing.assert_array_equal(frame.channels,
                                          frame_from_gray(base).channels)

    def test_canvas_accumulates_within_period(self):
        # all events in the first bin: frames 2..k of the period equal frame 1
        gray = [GrayscaleFrame(0, np.full((8, 8), 0.2)), GrayscaleFrame(330_000, np.full((8, 8), 0.2))]
        events = make_stream([(2, 2, 1000, 1), (5, 5, 2000, 0)])
        seq = fuse_sequence(events, gray, uniform_truth(10), EncodingConfig())
        assert len(seq) == 10
        for frame in seq.frames[1:10]:
            np.testing.assert_array_equal(frame.channels, seq.frames[0].channels)
        assert not np.array_equal(seq.frames[0].channels,
                                  frame_from_gray(gray[0]).channels)

    def test_canvas_resets_at_new_gray_frame(self):
        gray = [GrayscaleFrame(0, np.full((8, 8), 0.2)),
                GrayscaleFrame(66_000, np.full((8, 8), 0.6))]
        events = make_stream([(2, 2, 1000, 1)])
        truth = uniform_truth(4)
        seq = fuse_sequence(events, gray, truth, EncodingConfig())
        # second period frames start fresh from the second gray base
        np.testing.assert_array_equal(seq.frames[2].channels,
                                      frame_from_gray(gray[1]).channels)

    def test_bin_partition_of_events(self):
        # with T_bin dividing the gray period, bins tile the span exactly
        rng = np.random.default_rng(0)
        ts = np.sort(rng.integers(0, 200_000, 300))
        events = EventStream(rng.integers(0, 8, 300), rng.integers(0, 8, 300),
                             ts, rng.integers(0, 2, 300), GEOM)
        gray = [GrayscaleFrame(0, np.zeros((8, 8))), GrayscaleFrame(100_000, np.zeros((8, 8))),
                GrayscaleFrame(200_000, np.zeros((8, 8)))]
        cfg = EncodingConfig(bin_us=20_000)
        truth = uniform_truth(10, period=20_000)
        seq = fuse_sequence(events, gray, truth, cfg)
        assert len(seq) == 10

    def test_truth_too_short(self):
        gray = [GrayscaleFrame(0, np.zeros((8, 8))), GrayscaleFrame(330_000, np.zeros((8, 8)))]
        with pytest.raises(ValueError, match="too short"):
            fuse_sequence(make_stream([]), gray, uniform_truth(5), EncodingConfig())

    def test_deterministic(self):
        gray = [GrayscaleFrame(t, np.full((8, 8), 0.3)) for t in (0, 200_000)]
        events = make_stream([(1, 2, 40_000, 1), (3, 3, 50_000, 0), (1, 2, 150_000, 1)])
        a = fuse_sequence(events, gray, uniform_truth(6), EncodingConfig())
        b = fuse_sequence(events, gray, uniform_truth(6), EncodingConfig())
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.channels, fb.channels)


class TestMakeSamplePairs:
    def make_seq(self, n):
        gray = [GrayscaleFrame(0, np.zeros((8, 8)))]
        truth = uniform_truth(n)
        events = make_stream([])
        cfg = EncodingConfig()
        return fuse_sequence(events, gray, truth, cfg)

    def test_pair_count(self):
        gray = [GrayscaleFrame(0, np.zeros((8, 8))) for _ in range(1)]
        truth = uniform_truth(30)
        seq = fuse_sequence(make_stream([(0, 0, 990_000, 1)]), gray, truth, EncodingConfig())
        assert len(make_sample_pairs(seq, GEOM)) == len(seq) - 1

    def test_first_pair_targets(self):
        truth = CentroidTrack([33_000, 66_000], [2.0, 6.0], [4.0, 3.0])
        gray = [GrayscaleFrame(0, np.zeros((8, 8)))]
        seq = fuse_sequence(make_stream([(0, 0, 66_000, 1)]), gray, truth, EncodingConfig())
        pairs = make_sample_pairs(seq, GEOM)
        assert len(pairs) == 1
        np.testing.assert_allclose(pairs[0].target, [[2 / 8, 4 / 8], [6 / 8, 3 / 8]])

    def test_too_few_frames(self):
        truth = CentroidTrack([33_000], [2.0], [4.0])
        gray = [GrayscaleFrame(0, np.zeros((8, 8)))]
        seq = fuse_sequence(make_stream([(0, 0, 33_000, 1)]), gray, truth, EncodingConfig())
        with pytest.raises(ValueError):
            make_sample_pairs(seq, GEOM)
