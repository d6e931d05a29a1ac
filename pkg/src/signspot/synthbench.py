"""Synthetic planted-query benchmark.

Generates a lexicon of smooth procedural signs (sinusoid-mixture hand paths
over a static body), composes sentence sequences by planting sign instances
joined with linear transitions and still padding, and emits balanced
sentence/query pairs whose presence labels are exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dtw import dtw_distance
from .errors import ConfigError, GenerationError
from .posedata import (
    LEFT_ELBOW, LEFT_SHOULDER, LEFT_WRIST, MID_HIP, NOSE, NUM_KEYPOINTS,
    RIGHT_ELBOW, RIGHT_SHOULDER, RIGHT_WRIST, PairSample, PoseSequence,
    make_sequence,
)


@dataclass(frozen=True)
class SynthConfig:
    num_signs: int = 20
    signs_per_sentence: tuple[int, int] = (2, 2)
    proto_frames: tuple[int, int] = (6, 9)
    instance_noise_std: float = 0.003
    time_warp_range: tuple[float, float] = (0.95, 1.08)
    transition_frames: tuple[int, int] = (1, 2)
    still_frames: tuple[int, int] = (2, 3)
    offset_std: float = 0.01
    scale_jitter: float = 0.02
    separation_floor: float = 0.25
    max_retries: int = 200
    fps: float = 25.0
    seed: int = 7

    def validate(self) -> "SynthConfig":
        if self.num_signs < 2:
            raise ConfigError(f"num_signs must be >= 2, got {self.num_signs}")
        for name in ("signs_per_sentence", "proto_frames", "transition_frames",
                     "still_frames", "time_warp_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range must be ordered, got {(lo, hi)}")
        if self.signs_per_sentence[0] < 1:
            raise ConfigError("sentences need at least one sign")
        return self


# difficulty presets; sizes are picked so the full benchmark fits a single
# CPU core within the repository's runtime targets
PRESETS: dict[str, dict] = {
    "clean": {
        "config": SynthConfig(),
        "train_pairs": 2000, "val_pairs": 400, "test_pairs": 400,
    },
    "noisy": {
        "config": SynthConfig(
            signs_per_sentence=(2, 3), instance_noise_std=0.015,
            time_warp_range=(0.85, 1.2), transition_frames=(1, 3),
            offset_std=0.02, scale_jitter=0.04, separation_floor=0.22,
        ),
        "train_pairs": 2000, "val_pairs": 400, "test_pairs": 400,
    },
    "paper-scale": {
        "config": SynthConfig(num_signs=1410, signs_per_sentence=(3, 8),
                              proto_frames=(8, 14)),
        "train_pairs": 20346, "val_pairs": 5086, "test_pairs": 0,
    },
}


def preset_total_pairs(name: str) -> int:
    p = PRESETS[name]
    return p["train_pairs"] + p["val_pairs"] + p["test_pairs"]


@dataclass
class Lexicon:
    sign_ids: list[str]
    prototypes: dict[str, np.ndarray]  # id -> (T0, 50, 2), shoulder-normalized

    def __contains__(self, sign_id: str) -> bool:
        return sign_id in self.prototypes


def _static_body() -> np.ndarray:
    """Plausible normalized upper body (y grows downward)."""
    body = np.zeros((NUM_KEYPOINTS, 2))
    body[NOSE] = (0.0, -0.45)
    body[LEFT_SHOULDER] = (-0.5, 0.0)
    body[RIGHT_SHOULDER] = (0.5, 0.0)
    body[LEFT_ELBOW] = (-0.68, 0.35)
    body[RIGHT_ELBOW] = (0.68, 0.35)
    body[MID_HIP] = (0.0, 1.1)
    return body


def _hand_path(rng: np.random.Generator, T: int, center: np.ndarray) -> np.ndarray:
    """Low-frequency sinusoid mixture, one smooth closed-ish path per hand."""
    tau = np.linspace(0.0, 1.0, T, endpoint=False)
    path = np.tile(center, (T, 1))
    for k in range(3):
        amp = rng.uniform(0.06, 0.26) * (0.55 ** k)
        for c in range(2):
            freq = rng.uniform(0.5, 2.2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            path[:, c] += amp * np.sin(2.0 * np.pi * freq * tau + phase) * rng.choice([-1.0, 1.0])
    return path


def _prototype(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    T = int(rng.integers(cfg.proto_frames[0], cfg.proto_frames[1] + 1))
    frames = np.tile(_static_body(), (T, 1, 1))
    tau = np.linspace(0.0, 1.0, T, endpoint=False)
    for hand, sign_x in ((0, -1.0), (21, 1.0)):
        # wide center spread keeps the lexicon spatially diverse, which both
        # raises DTW separation and gives the encoder distinct frame statistics
        center = np.array([sign_x * 0.35, 0.45]) + rng.normal(0.0, 0.2, 2)
        base = _hand_path(rng, T, center)
        shape = rng.normal(0.0, 0.05, (21, 2))
        shape[0] = 0.0  # keypoint 0 is the wrist itself
        for j in range(21):
            amp = abs(rng.normal(0.0, 0.015))
            freq = rng.uniform(1.0, 3.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wiggle = amp * np.stack([
                np.sin(2.0 * np.pi * freq * tau + phase),
                np.cos(2.0 * np.pi * freq * tau + phase),
            ], axis=1)
            frames[:, hand + j] = base + shape[j] + wiggle
        wrist = LEFT_WRIST if hand == 0 else RIGHT_WRIST
        frames[:, wrist] = base
    return frames


def _proto_features(proto: np.ndarray) -> np.ndarray:
    return proto[:, 0:42].reshape(len(proto), -1)


def generate_lexicon(cfg: SynthConfig) -> Lexicon:
    """Rejection-sample prototypes until all pairwise DTW distances clear the floor."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 11])
    prototypes: dict[str, np.ndarray] = {}
    features: list[np.ndarray] = []
    for i in range(cfg.num_signs):
        for attempt in range(cfg.max_retries):
            cand = _prototype(rng, cfg)
            cand_f = _proto_features(cand)
            if all(dtw_distance(cand_f, f) >= cfg.separation_floor for f in features):
                prototypes[f"sign_{i:04d}"] = cand
                features.append(cand_f)
                break
        else:
            raise GenerationError(
                f"could not place sign {i} above the separation floor "
                f"{cfg.separation_floor} after {cfg.max_retries} tries; "
                "use fewer signs or a lower floor"
            )
    return Lexicon(list(prototypes), prototypes)


def _resample(frames: np.ndarray, new_len: int) -> np.ndarray:
    T = len(frames)
    if new_len == T:
        return frames.copy()
    pos = np.linspace(0.0, T - 1.0, new_len)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, T - 1)
    frac = (pos - lo)[:, None, None]
    return frames[lo] * (1.0 - frac) + frames[hi] * frac


def synth_sign_instance(lexicon: Lexicon, sign_id: str, cfg: SynthConfig,
                        rng: np.random.Generator, id: str = "instance") -> PoseSequence:
    """One signer-varied rendition: time warp, keypoint noise, tiny offset/scale."""
    if sign_id not in lexicon:
        raise KeyError(f"unknown sign id {sign_id!r}")
    proto = lexicon.prototypes[sign_id]
    warp = rng.uniform(cfg.time_warp_range[0], cfg.time_warp_range[1])
    frames = _resample(proto, max(2, int(round(len(proto) * warp))))
    frames = frames + rng.normal(0.0, cfg.instance_noise_std, frames.shape)
    scale = 1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter)
    offset = rng.normal(0.0, cfg.offset_std, 2)
    frames = frames * scale + offset
    return make_sequence(id, frames, fps=cfg.fps)


def compose_sentence(lexicon: Lexicon, sign_ids: list[str], cfg: SynthConfig,
                     rng: np.random.Generator, id: str = "sentence") -> tuple[PoseSequence, list[str]]:
    """Plant the given signs in order, joined by linear transitions, padded with stills."""
    if not sign_ids:
        raise ConfigError("a sentence needs at least one sign")
    instances = [
        synth_sign_instance(lexicon, sid, cfg, rng, id=f"{id}:{sid}").frames
        for sid in sign_ids
    ]
    parts = [instances[0]]
    for nxt in instances[1:]:
        tau = int(rng.integers(cfg.transition_frames[0], cfg.transition_frames[1] + 1))
        if tau > 0:
            a, b = parts[-1][-1], nxt[0]
            steps = (np.arange(1, tau + 1) / (tau + 1.0))[:, None, None]
            parts.append(a[None] * (1.0 - steps) + b[None] * steps)
        parts.append(nxt)
    lead = int(rng.integers(cfg.still_frames[0], cfg.still_frames[1] + 1))
    trail = int(rng.integers(cfg.still_frames[0], cfg.still_frames[1] + 1))
    body = np.concatenate(parts)
    frames = np.concatenate([
        np.tile(body[0], (lead, 1, 1)), body, np.tile(body[-1], (trail, 1, 1))
    ])
    return make_sequence(id, frames, fps=cfg.fps), list(sign_ids)


@dataclass
class SynthDataset:
    samples: list[PairSample]
    truth: dict[str, list[str]]          # sentence id -> planted sign ids
    query_signs: dict[str, str]          # query id -> source sign id

    @property
    def pairs(self) -> list[tuple[str, str, int]]:
        return [(p.sentence.id, p.query.id, p.label) for p in self.samples]


def split_sign_pool(lexicon: Lexicon, holdout_fraction: float,
                    seed: int) -> tuple[list[str], list[str]]:
    """Disjoint sign pools, e.g. for a test split with unseen signs."""
    ids = list(lexicon.sign_ids)
    n_hold = int(round(len(ids) * holdout_fraction))
    if holdout_fraction > 0 and not 0 < n_hold < len(ids):
        raise ConfigError("holdout fraction leaves one of the pools empty")
    order = np.random.default_rng(seed).permutation(len(ids))
    held = [ids[i] for i in order[:n_hold]]
    kept = [ids[i] for i in order[n_hold:]]
    return kept, held


def make_pair_dataset(lexicon: Lexicon, n_pairs: int, cfg: SynthConfig,
                      salt: int = 0, sign_pool: list[str] | None = None,
                      id_prefix: str = "") -> SynthDataset:
    """Balanced positive/negative pairs; every positive query is a fresh instance."""
    cfg.validate()
    if n_pairs % 2 != 0:
        raise ConfigError(f"n_pairs must be even to stay balanced, got {n_pairs}")
    pool = list(sign_pool) if sign_pool is not None else list(lexicon.sign_ids)
    if len(pool) <= cfg.signs_per_sentence[1]:
        raise GenerationError(
            f"pool of {len(pool)} signs cannot guarantee negatives for sentences "
            f"holding up to {cfg.signs_per_sentence[1]} signs"
        )
    rng = np.random.default_rng([cfg.seed, 17, salt])
    samples: list[PairSample] = []
    truth: dict[str, list[str]] = {}
    query_signs: dict[str, str] = {}
    for i in range(n_pairs):
        positive = i < n_pairs // 2
        k = int(rng.integers(cfg.signs_per_sentence[0], cfg.signs_per_sentence[1] + 1))
        sent_ids = [pool[j] for j in rng.choice(len(pool), size=k, replace=False)]
        sid = f"{id_prefix}sent_{i:06d}"
        qid = f"{id_prefix}qry_{i:06d}"
        sentence, planted = compose_sentence(lexicon, sent_ids, cfg, rng, id=sid)
        if positive:
            target = planted[int(rng.integers(len(planted)))]
        else:
            negatives = [s for s in pool if s not in sent_ids]
            target = negatives[int(rng.integers(len(negatives)))]
        query = synth_sign_instance(lexicon, target, cfg, rng, id=qid)
        samples.append(PairSample(sentence, query, int(positive)))
        truth[sid] = planted
        query_signs[qid] = target
    order = rng.permutation(len(samples))
    samples = [samples[i] for i in order]
    return SynthDataset(samples, truth, query_signs)
