import math

import numpy as np
import pytest

from llsh import encoder as enc
from llsh import index as idx
from llsh import scoring


def brute_force_score(index, encoder, train_features, y, config=None):
    """Oracle: re-derive all keys by scanning every training code per table."""
    config = config or scoring.QueryConfig()
    sentinel = scoring.resolve_sentinel(config, index.code_len)
    all_codes = enc.encode_batch(encoder, train_features)  # (n, b, r)
    q_codes, _ = enc.encode(encoder, y)
    best = sentinel
    for j in range(index.num_tables):
        qk = enc.binarize(q_codes[j])
        dists = []
        for i in range(all_codes.shape[0]):
            if np.array_equal(enc.binarize(all_codes[i, j]), qk):
                diff = all_codes[i, j].astype(np.float64) - q_codes[j].astype(np.float64)
                dists.append(math.sqrt(float((diff**2).sum())))
        if dists:
            best = min(best, sum(dists) / len(dists))
    return best


def two_bit_index(codes, r=2):
    codes = np.asarray(codes, dtype=np.float32)
    key = enc.pack_key(enc.binarize(codes[0]))
    return idx.HashIndex("full", r, 1, codes.shape[0], 0, [{key: codes}])


class TestBucketDistance:
    def test_self_distance_zero(self):
        h = np.array([0.3, 0.4], dtype=np.float32)
        index = two_bit_index([[0.3, 0.4]])
        assert scoring.bucket_distance(index, 0, h) == 0.0

    def test_missing_key_returns_sentinel(self):
        encoder = enc.init_random(enc.EncoderConfig(8, 32, 1, seed=0))
        built = idx.build_index(encoder, np.ones((1, 8)))
        # craft a code whose key cannot be in the single-bucket table
        stored_key = next(iter(built.tables[0]))
        code = 1.0 - enc.unpack_key(stored_key, 32).astype(np.float32)  # flipped bits
        assert scoring.bucket_distance(built, 0, code) == pytest.approx(math.sqrt(32))

    def test_hand_computed_average(self):
        index = two_bit_index([[0.1, 0.1], [0.3, 0.3]])
        got = scoring.bucket_distance(index, 0, np.array([0.1, 0.1], dtype=np.float32))
        assert got == pytest.approx((0.0 + math.sqrt(0.08)) / 2.0, abs=1e-7)
        assert got == pytest.approx(0.1414, abs=1e-4)

    def test_light_variant_uses_mean(self):
        full = two_bit_index([[0.1, 0.1], [0.3, 0.3]])
        light = idx.lighten(full)
        h = np.array([0.1, 0.1], dtype=np.float32)
        assert scoring.bucket_distance(light, 0, h) == pytest.approx(
            math.sqrt(2) * 0.1, abs=1e-6
        )

    def test_cosine_metric(self):
        index = two_bit_index([[0.6, 0.8]])
        cfg = scoring.QueryConfig(distance="cosine")
        got = scoring.bucket_distance(index, 0, np.array([0.6, 0.8], dtype=np.float32), cfg)
        assert got == pytest.approx(0.0, abs=1e-7)

    def test_code_length_checked(self):
        index = two_bit_index([[0.1, 0.1]])
        with pytest.raises(ValueError):
            scoring.bucket_distance(index, 0, np.ones(3, dtype=np.float32))


class TestAnomalyScore:
    def test_indexed_feature_scores_zero_on_singletons(self):
        encoder = enc.init_random(enc.EncoderConfig(16, 6, 4, seed=0))
        feats = np.random.default_rng(100).standard_normal((5, 16))
        built = idx.build_index(encoder, feats)
        assert all(len(t) == 5 for t in built.tables)  # seed pinned: all singletons
        assert scoring.anomaly_score(built, encoder, feats[2]) == 0.0

    def test_min_over_tables_and_sentinel_iff_all_miss(self):
        encoder = enc.init_random(enc.EncoderConfig(12, 16, 6, seed=3))
        rng = np.random.default_rng(1)
        feats = rng.standard_normal((60, 12))
        built = idx.build_index(encoder, feats)
        cfg = scoring.QueryConfig()
        sentinel = scoring.resolve_sentinel(cfg, built.code_len)
        for y in rng.standard_normal((20, 12)):
            codes, _ = enc.encode(encoder, y)
            per_table = [
                scoring.bucket_distance(built, j, codes[j], cfg) for j in range(6)
            ]
            score = scoring.anomaly_score(built, encoder, y, cfg)
            assert score == min(per_table)
            assert all(score <= d for d in per_table)
            assert (score == sentinel) == all(d == sentinel for d in per_table)

    def test_adding_a_table_never_increases(self):
        codes = np.array([[0.2, 0.6], [0.4, 0.7]], dtype=np.float32)
        h = np.array([0.3, 0.8], dtype=np.float32)
        key = enc.pack_key(enc.binarize(codes[0]))
        small = idx.HashIndex("full", 2, 1, 2, 0, [{key: codes}])
        extra = {enc.pack_key(enc.binarize(h)): np.array([[0.31, 0.79]], dtype=np.float32)}
        big = idx.HashIndex("full", 2, 2, 3, 0, [{key: codes}, extra])
        d_small = scoring.bucket_distance(small, 0, h)
        d_big = min(scoring.bucket_distance(big, j, h) for j in range(2))
        assert d_big <= d_small

    def test_matches_brute_force_oracle(self):
        encoder = enc.init_random(enc.EncoderConfig(10, 8, 4, seed=5))
        rng = np.random.default_rng(2)
        feats = rng.standard_normal((80, 10))
        built = idx.build_index(encoder, feats)
        for y in rng.standard_normal((15, 10)):
            fast = scoring.anomaly_score(built, encoder, y)
            slow = brute_force_score(built, encoder, feats, y)
            assert fast == pytest.approx(slow, abs=1e-5)

    def test_full_light_equal_on_singletons(self):
        encoder = enc.init_random(enc.EncoderConfig(16, 10, 3, seed=0))
        rng = np.random.default_rng(200)
        feats = rng.standard_normal((4, 16))
        full = idx.build_index(encoder, feats)
        light = idx.lighten(full)
        assert all(len(t) == 4 for t in full.tables)  # seed pinned: all singletons
        for y in rng.standard_normal((10, 16)):
            assert scoring.anomaly_score(full, encoder, y) == scoring.anomaly_score(
                light, encoder, y
            )

    def test_score_features_workers_identical(self):
        encoder = enc.init_random(enc.EncoderConfig(8, 6, 3, seed=11))
        rng = np.random.default_rng(4)
        feats = rng.standard_normal((50, 8))
        built = idx.build_index(encoder, feats)
        ys = rng.standard_normal((33, 8))
        a = scoring.score_features(built, encoder, ys, workers=1)
        b = scoring.score_features(built, encoder, ys, workers=4)
        assert np.array_equal(a, b)


class TestSmooth:
    def test_sigma_zero_is_identity(self):
        x = np.array([1.0, 5.0, 2.0])
        assert np.array_equal(scoring.smooth(x, 0.0), x)

    def test_impulse_center_weight(self):
        # independent kernel arithmetic: radius 3, normalized Gaussian weights
        x = np.zeros(21)
        x[10] = 1.0
        out = scoring.smooth(x, 1.0)
        ksum = 1.0 + 2.0 * sum(math.exp(-0.5 * i * i) for i in (1, 2, 3))
        assert out[10] == pytest.approx(1.0 / ksum, abs=1e-12)
        assert out[10] == pytest.approx(0.39905, abs=1e-5)

    def test_mass_conservation_reflect(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 3, size=200)
        for sigma in (1.0, 4.0, 10.0):
            out = scoring.smooth(x, sigma)
            assert out.sum() == pytest.approx(x.sum(), abs=1e-9)

    def test_constant_series_unchanged(self):
        x = np.full(50, 3.25)
        assert np.allclose(scoring.smooth(x, 7.0), x, atol=1e-12)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            scoring.smooth(np.ones(3), -1.0)


class TestFrameAssembly:
    def test_one_feature_per_frame_identity(self):
        scores = np.array([3.0, 1.0, 2.0])
        spans = np.array([[0, 1], [1, 1], [2, 1]])
        assert np.array_equal(scoring.assemble_frame_scores(scores, spans, 3), scores)

    def test_overlapping_features_average(self):
        scores = np.array([1.0, 3.0])
        spans = np.array([[0, 2], [1, 2]])
        assert np.allclose(scoring.assemble_frame_scores(scores, spans, 3), [1.0, 2.0, 3.0])

    def test_uncovered_frames_inherit_nearest(self):
        scores = np.array([5.0, 9.0])
        spans = np.array([[1, 1], [5, 1]])
        got = scoring.assemble_frame_scores(scores, spans, 7)
        # frame 3 is equidistant: ties resolve to the earlier frame
        assert np.array_equal(got, [5.0, 5.0, 5.0, 5.0, 9.0, 9.0, 9.0])

    def test_errors(self):
        with pytest.raises(ValueError):
            scoring.assemble_frame_scores(np.array([1.0]), np.array([[5, 2]]), 6)
        with pytest.raises(ValueError):
            scoring.assemble_frame_scores(np.array([1.0]), np.array([[0, 0]]), 6)


class TestScoreVideo:
    def make(self):
        encoder = enc.init_random(enc.EncoderConfig(8, 6, 3, seed=13))
        rng = np.random.default_rng(6)
        feats = rng.standard_normal((40, 8))
        built = idx.build_index(encoder, feats)
        queries = rng.standard_normal((12, 8))
        spans = np.column_stack([np.arange(12), np.ones(12, dtype=int)])
        return built, encoder, queries, spans

    def test_identity_pipeline(self):
        built, encoder, queries, spans = self.make()
        cfg = scoring.QueryConfig(smooth_sigma=0.0)
        series = scoring.score_video(built, encoder, queries, spans, 12, cfg, "v0")
        raw = scoring.score_features(built, encoder, queries)
        assert series.video_id == "v0"
        assert np.array_equal(series.scores, raw)

    def test_minmax_bounds(self):
        built, encoder, queries, spans = self.make()
        cfg = scoring.QueryConfig(smooth_sigma=2.0, per_video_minmax=True)
        series = scoring.score_video(built, encoder, queries, spans, 12, cfg, "v0")
        assert series.scores.min() == 0.0
        assert series.scores.max() == 1.0

    def test_scores_finite_nonnegative(self):
        built, encoder, queries, spans = self.make()
        series = scoring.score_video(built, encoder, queries, spans, 12, None, "v0")
        assert np.isfinite(series.scores).all()
        assert (series.scores >= 0).all()


class TestQueryConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            scoring.QueryConfig(sentinel=0.0)
        with pytest.raises(ValueError):
            scoring.QueryConfig(distance="manhattan")
        with pytest.raises(ValueError):
            scoring.QueryConfig(smooth_sigma=-2.0)

    def test_default_sentinel_is_cube_dimeter(self):
        assert scoring.resolve_sentinel(scoring.QueryConfig(), 32) == math.sqrt(32)
        assert scoring.resolve_sentinel(scoring.QueryConfig(sentinel=9.0), 32) == 9.0
