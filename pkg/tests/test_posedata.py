import json

import numpy as np
import pytest

from signspot import posedata as pd
from signspot.errors import DegenerateBatchError, PoseParseError, PoseSchemaError


def random_sequence(rng, T=12, id="seq"):
    frames = rng.standard_normal((T, 50, 2)) * 0.3
    return pd.make_sequence(id, frames)


def normalized_body_frame(rng=None, T=6):
    """Frames with shoulders already at (-0.5, 0) / (0.5, 0)."""
    rng = rng or np.random.default_rng(0)
    frames = rng.standard_normal((T, 50, 2)) * 0.2
    frames[:, pd.LEFT_SHOULDER] = [-0.5, 0.0]
    frames[:, pd.RIGHT_SHOULDER] = [0.5, 0.0]
    return pd.make_sequence("norm", frames)


class TestPoseFile:
    def test_all_zero_record_is_all_invalid(self, tmp_path):
        path = tmp_path / "poses.jsonl"
        rec = {"id": "a", "fps": 25, "frames": [[0.0] * 100]}
        path.write_text(json.dumps(rec) + "\n")
        (seq,) = pd.load_pose_file(path)
        assert seq.num_frames == 1
        assert not seq.validity.any()

    def test_wrong_keypoint_count_is_schema_error(self, tmp_path):
        path = tmp_path / "poses.jsonl"
        rec = {"id": "a", "fps": 25, "frames": [[0.1] * 98]}
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(PoseSchemaError, match="49 keypoints"):
            pd.load_pose_file(path)

    def test_parse_error_reports_line_number(self, tmp_path):
        path = tmp_path / "poses.jsonl"
        good = json.dumps({"id": "a", "fps": 25, "frames": [[0.5] * 100]})
        path.write_text(good + "\n{broken\n")
        with pytest.raises(PoseParseError, match="line 2"):
            pd.load_pose_file(path)

    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        seqs = [random_sequence(rng, T=5, id=f"s{i}") for i in range(3)]
        seqs[1].validity[2, 10:20] = False
        seqs[1].frames[2, 10:20] = 0.0
        path = tmp_path / "poses.jsonl"
        pd.save_pose_file(seqs, path)
        loaded = pd.load_pose_file(path)
        for a, b in zip(seqs, loaded):
            assert a.id == b.id and a.fps == b.fps
            np.testing.assert_array_equal(a.frames, b.frames)
            np.testing.assert_array_equal(a.validity, b.validity)

    def test_extra_fields_ignored(self, tmp_path):
        path = tmp_path / "poses.jsonl"
        rec = {"id": "a", "fps": 25, "frames": [[0.5] * 100], "face": [[0.0] * 38]}
        path.write_text(json.dumps(rec) + "\n")
        (seq,) = pd.load_pose_file(path)
        assert seq.num_frames == 1

    def test_pairs_round_trip(self, tmp_path):
        pairs = [("s1", "q1", 1), ("s2", "q2", 0)]
        path = tmp_path / "pairs.jsonl"
        pd.save_pairs_file(pairs, path)
        assert pd.load_pairs_file(path) == pairs

    def test_pairs_bad_label(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text('{"sentence_id": "s", "query_id": "q", "label": 2}\n')
        with pytest.raises(PoseSchemaError):
            pd.load_pairs_file(path)


class TestNormalize:
    def test_normalized_frame_is_fixed_point(self):
        seq = normalized_body_frame()
        out = pd.normalize_sequence(seq)
        np.testing.assert_allclose(out.frames, seq.frames, atol=1e-9)

    def test_similarity_invariance(self):
        rng = np.random.default_rng(2)
        seq = normalized_body_frame(rng)
        base = pd.normalize_sequence(seq)
        scaled = seq.copy()
        scaled.frames = seq.frames * 2.0 + np.array([3.0, -1.0])
        out = pd.normalize_sequence(scaled)
        np.testing.assert_allclose(out.frames, base.frames, atol=1e-9)

    def test_degenerate_shoulders_reuse_previous_transform(self):
        rng = np.random.default_rng(3)
        seq = normalized_body_frame(rng, T=3)
        seq.frames = seq.frames * 3.0 + 1.0  # needs normalizing
        # frame 2: shoulders collapse to a point
        seq.frames[2, pd.LEFT_SHOULDER] = seq.frames[2, pd.RIGHT_SHOULDER]
        out = pd.normalize_sequence(seq)
        # expected: frame 2 transformed with frame 1's midpoint/scale
        ls, rs = seq.frames[1, pd.LEFT_SHOULDER], seq.frames[1, pd.RIGHT_SHOULDER]
        mid, scale = (ls + rs) / 2, np.linalg.norm(ls - rs)
        np.testing.assert_allclose(out.frames[2], (seq.frames[2] - mid) / scale, atol=1e-12)

    def test_first_frame_degenerate_uses_identity(self):
        rng = np.random.default_rng(4)
        seq = normalized_body_frame(rng, T=2)
        seq.frames[0, pd.LEFT_SHOULDER] = seq.frames[0, pd.RIGHT_SHOULDER] = [0.3, 0.3]
        out = pd.normalize_sequence(seq)
        np.testing.assert_allclose(out.frames[0], seq.frames[0])

    def test_invalid_keypoints_stay_zero(self):
        seq = normalized_body_frame(T=2)
        seq.frames = seq.frames + 0.5
        seq.validity[:, 0] = False
        seq.frames[:, 0] = 0.0
        out = pd.normalize_sequence(seq)
        np.testing.assert_array_equal(out.frames[:, 0], 0.0)


def sequence_with_motion(n_still_pre=10, n_moving=5, n_still_post=10):
    rng = np.random.default_rng(5)
    rest = rng.standard_normal((50, 2)) * 0.1
    frames = [rest.copy() for _ in range(n_still_pre)]
    cur = rest.copy()
    for _ in range(n_moving):
        cur = cur + rng.standard_normal((50, 2)) * 0.05 + 0.01
        frames.append(cur.copy())
    frames.extend(cur.copy() for _ in range(n_still_post))
    return pd.make_sequence("m", np.stack(frames))


class TestTrim:
    def test_all_identical_keeps_middle_frame(self):
        frames = np.tile(np.random.default_rng(6).standard_normal((1, 50, 2)), (9, 1, 1))
        seq = pd.make_sequence("still", frames)
        out = pd.trim_still_frames(seq)
        assert out.num_frames == 1
        np.testing.assert_array_equal(out.frames[0], frames[4])

    def test_movement_everywhere_is_identity(self):
        rng = np.random.default_rng(7)
        frames = np.cumsum(rng.standard_normal((8, 50, 2)) * 0.05 + 0.01, axis=0)
        seq = pd.make_sequence("move", frames)
        out = pd.trim_still_frames(seq)
        assert out.num_frames == 8

    def test_planted_still_padding(self):
        seq = sequence_with_motion(10, 5, 10)
        out = pd.trim_still_frames(seq)
        # convention keeps one leading rest frame: frames 9..14 of 25
        assert out.num_frames == 6
        np.testing.assert_array_equal(out.frames, seq.frames[9:15])
        assert abs(out.num_frames - 5) <= 1  # within the documented boundary slack

    def test_idempotent(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            # random walk with random pauses
            steps = rng.standard_normal((20, 50, 2)) * 0.05
            steps[rng.random(20) < 0.4] = 0.0
            frames = np.cumsum(steps, axis=0)
            seq = pd.make_sequence("w", frames)
            once = pd.trim_still_frames(seq)
            twice = pd.trim_still_frames(once)
            np.testing.assert_array_equal(once.frames, twice.frames)

    def test_single_frame_untouched(self):
        seq = pd.make_sequence("one", np.random.default_rng(8).standard_normal((1, 50, 2)))
        assert pd.trim_still_frames(seq).num_frames == 1


class TestAugment:
    def identity_cfg(self):
        return pd.AugmentationConfig(mask_prob=0.0, scale_range=(1.0, 1.0),
                                     jitter_std=0.0, noise_std=0.0)

    def test_identity_config(self):
        seq = random_sequence(np.random.default_rng(9))
        out = pd.augment(seq, self.identity_cfg(), np.random.default_rng(0))
        np.testing.assert_array_equal(out.frames, seq.frames)
        np.testing.assert_array_equal(out.validity, seq.validity)

    def test_deterministic_per_seed(self):
        seq = random_sequence(np.random.default_rng(10))
        cfg = pd.AugmentationConfig()
        a = pd.augment(seq, cfg, np.random.default_rng(42))
        b = pd.augment(seq, cfg, np.random.default_rng(42))
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.validity, b.validity)
        c = pd.augment(seq, cfg, np.random.default_rng(43))
        assert not np.array_equal(a.frames, c.frames)

    def test_mask_everything(self):
        seq = random_sequence(np.random.default_rng(11))
        cfg = pd.AugmentationConfig(mask_prob=1.0)
        out = pd.augment(seq, cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(out.frames, 0.0)
        assert not out.validity.any()

    def test_invalid_keypoints_never_perturbed(self):
        seq = random_sequence(np.random.default_rng(12))
        seq.validity[:, 5] = False
        seq.frames[:, 5] = 0.0
        out = pd.augment(seq, pd.AugmentationConfig(), np.random.default_rng(1))
        np.testing.assert_array_equal(out.frames[:, 5], 0.0)


class TestSubsample:
    def test_identity_when_under_cap(self):
        seq = random_sequence(np.random.default_rng(13), T=10)
        assert pd.subsample_to_cap(seq, 10) is seq

    def test_endpoints_t5_cap2(self):
        seq = random_sequence(np.random.default_rng(14), T=5)
        out = pd.subsample_to_cap(seq, 2)
        np.testing.assert_array_equal(out.frames[0], seq.frames[0])
        np.testing.assert_array_equal(out.frames[1], seq.frames[4])

    def test_t100_cap50(self):
        seq = random_sequence(np.random.default_rng(15), T=100)
        out = pd.subsample_to_cap(seq, 50)
        assert out.num_frames == 50
        np.testing.assert_array_equal(out.frames[0], seq.frames[0])
        np.testing.assert_array_equal(out.frames[-1], seq.frames[99])

    def test_monotone_indices(self):
        for T, cap in [(17, 5), (33, 9), (100, 50), (7, 3)]:
            idx = [int(round(i * (T - 1) / (cap - 1))) for i in range(cap)]
            assert idx == sorted(idx)
            assert len(set(idx)) == cap


class TestCollateAndSplit:
    def make_pair(self, rng, ts, tq, label):
        return pd.PairSample(
            random_sequence(rng, T=ts, id=f"s{ts}"),
            random_sequence(rng, T=tq, id=f"q{tq}"),
            label,
        )

    def test_single_sample_lengths(self):
        rng = np.random.default_rng(16)
        batch = pd.collate_batch([self.make_pair(rng, 7, 3, 1)], 64, 16)
        assert batch.sentence_lengths.tolist() == [7]
        assert batch.query_lengths.tolist() == [3]

    def test_padding_to_batch_max(self):
        rng = np.random.default_rng(17)
        batch = pd.collate_batch(
            [self.make_pair(rng, 3, 2, 0), self.make_pair(rng, 5, 4, 1)], 64, 16
        )
        assert batch.sentence_frames.shape[1] == 5
        assert batch.sentence_lengths.tolist() == [3, 5]
        # padded region is exactly zero
        np.testing.assert_array_equal(batch.sentence_frames[0, 3:], 0.0)
        np.testing.assert_array_equal(batch.query_frames[0, 2:], 0.0)

    def test_empty_batch_rejected(self):
        with pytest.raises(DegenerateBatchError):
            pd.collate_batch([], 8, 8)

    def test_split_arithmetic_paper_scale(self):
        samples = list(range(25_432))
        train, val = pd.split_train_val(samples, 0.8, seed=0)
        assert (len(train), len(val)) == (20_346, 5_086)
        assert set(train) | set(val) == set(samples)
        assert not set(train) & set(val)

    def test_split_ten_samples(self):
        train, val = pd.split_train_val(list(range(10)), 0.8, seed=1)
        assert (len(train), len(val)) == (8, 2)

    def test_split_deterministic(self):
        a = pd.split_train_val(list(range(100)), 0.8, seed=7)
        b = pd.split_train_val(list(range(100)), 0.8, seed=7)
        assert a == b

    def test_split_too_small(self):
        with pytest.raises(DegenerateBatchError):
            pd.split_train_val([1], 0.8, seed=0)
