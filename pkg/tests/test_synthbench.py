from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from signspot import dtw
from signspot import posedata as pd
from signspot import synthbench as sb
from signspot.errors import ConfigError, GenerationError

CLEAN = sb.PRESETS["clean"]["config"]
EXACT = replace(
    CLEAN, instance_noise_std=0.0, time_warp_range=(1.0, 1.0),
    offset_std=0.0, scale_jitter=0.0,
)


@lru_cache(maxsize=None)
def clean_lexicon():
    return sb.generate_lexicon(CLEAN)


class TestDtw:
    def test_identical_sequences_zero(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((6, 4))
        assert dtw.dtw_distance(a, a) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((5, 3)), rng.standard_normal((8, 3))
        assert dtw.dtw_distance(a, b) == pytest.approx(dtw.dtw_distance(b, a))

    def test_against_exhaustive_path_oracle(self):
        # enumerate every monotone alignment path recursively
        rng = np.random.default_rng(2)
        for _ in range(5):
            a = rng.standard_normal((3, 2))
            b = rng.standard_normal((4, 2))
            cost = np.linalg.norm(a[:, None] - b[None, :], axis=2)

            def best(i, j):
                c = cost[i, j]
                if i == 0 and j == 0:
                    return c
                options = []
                if i > 0:
                    options.append(best(i - 1, j))
                if j > 0:
                    options.append(best(i, j - 1))
                if i > 0 and j > 0:
                    options.append(best(i - 1, j - 1))
                return c + min(options)

            want = best(2, 3) / (3 + 4)
            assert dtw.dtw_distance(a, b) == pytest.approx(want, abs=1e-12)

    def test_stutter_insensitive(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 4))
        stuttered = np.repeat(a, 2, axis=0)
        assert dtw.dtw_distance(a, stuttered) < 1e-9


class TestLexicon:
    def test_same_seed_identical(self):
        a = sb.generate_lexicon(CLEAN)
        b = sb.generate_lexicon(CLEAN)
        assert a.sign_ids == b.sign_ids
        for sid in a.sign_ids:
            np.testing.assert_array_equal(a.prototypes[sid], b.prototypes[sid])

    def test_two_signs_above_floor(self):
        cfg = replace(CLEAN, num_signs=2)
        lex = sb.generate_lexicon(cfg)
        assert len(lex.sign_ids) == 2
        f = [sb._proto_features(lex.prototypes[s]) for s in lex.sign_ids]
        assert dtw.dtw_distance(f[0], f[1]) >= cfg.separation_floor

    def test_min_pairwise_distance_brute_force(self):
        lex = clean_lexicon()
        feats = [sb._proto_features(lex.prototypes[s]) for s in lex.sign_ids[:8]]
        dists = [
            dtw.dtw_distance(feats[i], feats[j])
            for i in range(len(feats)) for j in range(i + 1, len(feats))
        ]
        assert min(dists) >= CLEAN.separation_floor

    def test_unreachable_floor_raises(self):
        cfg = replace(CLEAN, separation_floor=50.0, max_retries=3)
        with pytest.raises(GenerationError, match="fewer signs"):
            sb.generate_lexicon(cfg)

    def test_prototypes_are_normalized(self):
        lex = clean_lexicon()
        proto = lex.prototypes[lex.sign_ids[0]]
        mid = (proto[:, pd.LEFT_SHOULDER] + proto[:, pd.RIGHT_SHOULDER]) / 2
        dist = np.linalg.norm(proto[:, pd.LEFT_SHOULDER] - proto[:, pd.RIGHT_SHOULDER], axis=1)
        np.testing.assert_allclose(mid, 0.0, atol=1e-12)
        np.testing.assert_allclose(dist, 1.0, atol=1e-12)


class TestInstance:
    def test_zero_noise_unit_warp_is_prototype(self):
        lex = clean_lexicon()
        sid = lex.sign_ids[0]
        inst = sb.synth_sign_instance(lex, sid, EXACT, np.random.default_rng(0))
        np.testing.assert_array_equal(inst.frames, lex.prototypes[sid])

    def test_double_warp_doubles_length(self):
        cfg = replace(EXACT, proto_frames=(20, 20), time_warp_range=(2.0, 2.0))
        lex = sb.generate_lexicon(replace(cfg, num_signs=2))
        sid = lex.sign_ids[0]
        assert len(lex.prototypes[sid]) == 20
        inst = sb.synth_sign_instance(lex, sid, cfg, np.random.default_rng(1))
        assert inst.num_frames == 40

    def test_unknown_sign_rejected(self):
        with pytest.raises(KeyError):
            sb.synth_sign_instance(clean_lexicon(), "sign_9999", CLEAN,
                                   np.random.default_rng(0))

    def test_nearest_prototype_recovers_source(self):
        lex = clean_lexicon()
        rng = np.random.default_rng(5)
        protos = {s: sb._proto_features(lex.prototypes[s]) for s in lex.sign_ids}
        hits = 0
        for i in range(100):
            sid = lex.sign_ids[i % len(lex.sign_ids)]
            inst = sb.synth_sign_instance(lex, sid, CLEAN, rng)
            feats = dtw.hand_features(pd.normalize_sequence(inst))
            guess = min(protos, key=lambda s: dtw.dtw_distance(feats, protos[s]))
            hits += guess == sid
        assert hits >= 99


class TestComposeSentence:
    def test_single_sign_no_padding_equals_instance(self):
        cfg = replace(EXACT, transition_frames=(0, 0), still_frames=(0, 0))
        lex = clean_lexicon()
        sid = lex.sign_ids[3]
        sentence, planted = sb.compose_sentence(lex, [sid], cfg, np.random.default_rng(2))
        assert planted == [sid]
        np.testing.assert_array_equal(sentence.frames, lex.prototypes[sid])

    def test_length_arithmetic(self):
        lex = clean_lexicon()
        cfg = replace(EXACT, transition_frames=(3, 3), still_frames=(4, 4))
        ids = lex.sign_ids[:3]
        sentence, _ = sb.compose_sentence(lex, ids, cfg, np.random.default_rng(3))
        want = sum(len(lex.prototypes[s]) for s in ids) + 2 * 3 + 2 * 4
        assert sentence.num_frames == want

    def test_trim_removes_exactly_the_added_stills(self):
        lex = clean_lexicon()
        cfg = replace(CLEAN, still_frames=(4, 4))
        rng = np.random.default_rng(4)
        sentence, _ = sb.compose_sentence(lex, lex.sign_ids[:2], cfg, rng)
        trimmed = pd.trim_still_frames(pd.normalize_sequence(sentence))
        assert trimmed.num_frames == sentence.num_frames - 2 * 4


class TestPairDataset:
    def test_balanced_labels(self):
        data = sb.make_pair_dataset(clean_lexicon(), 40, CLEAN, salt=1)
        labels = [p.label for p in data.samples]
        assert labels.count(1) == labels.count(0) == 20

    def test_positive_queries_in_truth_negatives_not(self):
        data = sb.make_pair_dataset(clean_lexicon(), 40, CLEAN, salt=2)
        for p in data.samples:
            planted = data.truth[p.sentence.id]
            sign = data.query_signs[p.query.id]
            if p.label == 1:
                assert sign in planted
            else:
                assert sign not in planted

    def test_odd_count_rejected(self):
        with pytest.raises(ConfigError, match="even"):
            sb.make_pair_dataset(clean_lexicon(), 41, CLEAN)

    def test_deterministic(self):
        a = sb.make_pair_dataset(clean_lexicon(), 8, CLEAN, salt=3)
        b = sb.make_pair_dataset(clean_lexicon(), 8, CLEAN, salt=3)
        for x, y in zip(a.samples, b.samples):
            assert x.label == y.label
            np.testing.assert_array_equal(x.sentence.frames, y.sentence.frames)

    def test_paper_scale_preset_pair_count(self):
        assert sb.preset_total_pairs("paper-scale") == 25_432
        assert sb.PRESETS["paper-scale"]["config"].num_signs == 1410

    def test_disjoint_pools(self):
        lex = clean_lexicon()
        kept, held = sb.split_sign_pool(lex, 0.25, seed=0)
        assert not set(kept) & set(held)
        assert len(kept) + len(held) == len(lex.sign_ids)
        data = sb.make_pair_dataset(lex, 20, CLEAN, salt=4, sign_pool=held)
        for p in data.samples:
            assert data.query_signs[p.query.id] in held
            assert set(data.truth[p.sentence.id]) <= set(held)

    def test_pool_too_small_for_negatives(self):
        lex = clean_lexicon()
        too_small = CLEAN.signs_per_sentence[1]  # pool must exceed the max draw
        with pytest.raises(GenerationError):
            sb.make_pair_dataset(lex, 4, CLEAN, sign_pool=lex.sign_ids[:too_small])


class TestLabelCorrectness:
    def test_clean_pairs_match_dtw_matcher(self):
        data = sb.make_pair_dataset(clean_lexicon(), 80, CLEAN, salt=6)
        agree = sum(
            dtw.matcher_predict(p.sentence, p.query, threshold=0.4) == p.label
            for p in data.samples
        )
        assert agree == 80

    def test_noisy_pairs_mostly_match_matcher(self):
        cfg = sb.PRESETS["noisy"]["config"]
        lex = sb.generate_lexicon(cfg)
        data = sb.make_pair_dataset(lex, 80, cfg, salt=7)
        agree = sum(
            dtw.matcher_predict(p.sentence, p.query, threshold=0.4) == p.label
            for p in data.samples
        )
        assert agree >= 76  # >= 95%
