"""Pose sequences: file format, normalization, trimming, augmentation, batching.

A pose frame is 50 keypoints in 2D, flattened to 100 values: left hand
[0..21), right hand [21..42), body [42..50). The body block is nose, left
shoulder, right shoulder, left elbow, right elbow, left wrist, right wrist,
mid-hip. Missing keypoints are stored as (0, 0) with validity False.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatchError, PoseParseError, PoseSchemaError

NUM_KEYPOINTS = 50
FRAME_FEATURES = 2 * NUM_KEYPOINTS
HAND_KEYPOINTS = slice(0, 42)
NOSE, LEFT_SHOULDER, RIGHT_SHOULDER = 42, 43, 44
LEFT_ELBOW, RIGHT_ELBOW, LEFT_WRIST, RIGHT_WRIST, MID_HIP = 45, 46, 47, 48, 49

DEFAULT_TRIM_EPS = 0.003


@dataclass
class PoseSequence:
    """A keypoint trajectory: frames (T, 50, 2) with a per-keypoint validity mask."""

    id: str
    fps: float
    frames: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (NUM_KEYPOINTS, 2):
            raise PoseSchemaError(
                f"frames must be (T, {NUM_KEYPOINTS}, 2), got {self.frames.shape}"
            )
        if self.frames.shape[0] < 1:
            raise PoseSchemaError("a pose sequence needs at least one frame")
        self.validity = np.asarray(self.validity, dtype=bool)
        if self.validity.shape != self.frames.shape[:2]:
            raise PoseSchemaError(
                f"validity must be (T, {NUM_KEYPOINTS}), got {self.validity.shape}"
            )

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def copy(self) -> "PoseSequence":
        return PoseSequence(self.id, self.fps, self.frames.copy(), self.validity.copy())


def make_sequence(id: str, frames: np.ndarray, fps: float = 25.0,
                  validity: np.ndarray | None = None) -> PoseSequence:
    frames = np.asarray(frames, dtype=np.float64)
    if validity is None:
        validity = np.ones(frames.shape[:2], dtype=bool)
    return PoseSequence(id, fps, frames, validity)


@dataclass
class PairSample:
    sentence: PoseSequence
    query: PoseSequence
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise PoseSchemaError(f"pair label must be 0 or 1, got {self.label!r}")


@dataclass
class Batch:
    """Right-padded frame arrays plus true lengths; padding is always zeros."""

    sentence_frames: np.ndarray   # (B, Ts_max, 50, 2)
    query_frames: np.ndarray      # (B, Tq_max, 50, 2)
    sentence_lengths: np.ndarray  # (B,) int
    query_lengths: np.ndarray     # (B,) int
    labels: np.ndarray            # (B,) float

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass
class AugmentationConfig:
    mask_prob: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)
    jitter_std: float = 0.01
    noise_std: float = 0.005
    seed: int = 0

    def __post_init__(self):
        # 1.0 is allowed: mask everything (useful as a degenerate test case)
        if not 0.0 <= self.mask_prob <= 1.0:
            raise PoseSchemaError(f"mask_prob must be in [0, 1], got {self.mask_prob}")
        lo, hi = self.scale_range
        if lo > hi:
            raise PoseSchemaError(f"scale_range must be ordered, got {self.scale_range}")
        if self.jitter_std < 0 or self.noise_std < 0:
            raise PoseSchemaError("jitter_std and noise_std must be non-negative")


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------
# One JSON object per line:
#   {"id": str, "fps": number, "frames": [[100 floats] x T],
#    "validity": [[50 bools] x T]}   (validity optional, default all true)
# Unknown fields (e.g. facial landmarks) are ignored.


def load_pose_file(path) -> list[PoseSequence]:
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PoseParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            sequences.append(_parse_record(rec, lineno))
    return sequences


def _parse_record(rec, lineno: int) -> PoseSequence:
    if not isinstance(rec, dict):
        raise PoseParseError("record is not an object", line=lineno)
    for key in ("id", "fps", "frames"):
        if key not in rec:
            raise PoseSchemaError(f"missing field {key!r}", line=lineno)
    frames_raw = rec["frames"]
    if not frames_raw:
        raise PoseSchemaError("empty frame list", line=lineno)
    for t, fr in enumerate(frames_raw):
        if len(fr) != FRAME_FEATURES:
            raise PoseSchemaError(
                f"frame {t} has {len(fr)} values, expected {FRAME_FEATURES} "
                f"({len(fr) // 2} keypoints instead of {NUM_KEYPOINTS})",
                line=lineno,
            )
    frames = np.asarray(frames_raw, dtype=np.float64).reshape(-1, NUM_KEYPOINTS, 2)
    if "validity" in rec:
        validity = np.asarray(rec["validity"])
        if validity.shape != frames.shape[:2]:
            raise PoseSchemaError(
                f"validity shape {validity.shape} does not match {frames.shape[:2]}",
                line=lineno,
            )
        validity = validity.astype(bool)
    else:
        validity = np.ones(frames.shape[:2], dtype=bool)
    # a keypoint stored exactly at (0, 0) is a missed detection by convention
    validity &= ~(frames == 0.0).all(axis=2)
    frames[~validity] = 0.0
    fps = float(rec["fps"])
    if fps <= 0:
        raise PoseSchemaError(f"fps must be positive, got {fps}", line=lineno)
    return PoseSequence(str(rec["id"]), fps, frames, validity)


def save_pose_file(sequences: list[PoseSequence], path) -> None:
    """Write sequences in the line-delimited format (floats round-trip exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            rec = {
                "id": seq.id,
                "fps": seq.fps,
                "frames": seq.frames.reshape(seq.num_frames, FRAME_FEATURES).tolist(),
            }
            if not seq.validity.all():
                rec["validity"] = seq.validity.tolist()
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_pairs_file(path) -> list[tuple[str, str, int]]:
    """Pairs manifest: one {"sentence_id", "query_id", "label"} object per line."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PoseParseError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            try:
                label = int(rec["label"])
                if label not in (0, 1):
                    raise ValueError
                pairs.append((str(rec["sentence_id"]), str(rec["query_id"]), label))
            except (KeyError, TypeError, ValueError):
                raise PoseSchemaError(
                    "pair records need sentence_id, query_id and a 0/1 label",
                    line=lineno,
                ) from None
    return pairs


def save_pairs_file(pairs: list[tuple[str, str, int]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, qid, label in pairs:
            fh.write(json.dumps(
                {"sentence_id": sid, "query_id": qid, "label": int(label)},
                separators=(",", ":"),
            ) + "\n")


def resolve_pairs(pairs: list[tuple[str, str, int]],
                  sequences: list[PoseSequence]) -> list[PairSample]:
    """Resolve manifest ids against loaded sequences."""
    by_id = {s.id: s for s in sequences}
    samples = []
    for sid, qid, label in pairs:
        try:
            samples.append(PairSample(by_id[sid], by_id[qid], label))
        except KeyError as exc:
            raise PoseSchemaError(f"pair references unknown sequence id {exc.args[0]!r}") from None
    return samples


# ---------------------------------------------------------------------------
# Normalization and trimming
# ---------------------------------------------------------------------------


def normalize_sequence(s: PoseSequence) -> PoseSequence:
    """Anchor each frame: shoulder midpoint to the origin, shoulder distance to 1.

    Frames with a degenerate or missing shoulder pair reuse the previous
    frame's transform; if the first frame is degenerate it stays untouched.
    Only valid keypoints are transformed, so missing ones remain (0, 0).
    """
    frames = s.frames.copy()
    mid = np.zeros(2)
    scale = 1.0
    for t in range(s.num_frames):
        ls, rs = s.frames[t, LEFT_SHOULDER], s.frames[t, RIGHT_SHOULDER]
        ok = s.validity[t, LEFT_SHOULDER] and s.validity[t, RIGHT_SHOULDER]
        if ok:
            dist = float(np.linalg.norm(ls - rs))
            if dist >= 1e-6:
                mid = (ls + rs) / 2.0
                scale = dist
        valid = s.validity[t]
        frames[t, valid] = (s.frames[t, valid] - mid) / scale
    return PoseSequence(s.id, s.fps, frames, s.validity.copy())


def trim_still_frames(s: PoseSequence, eps: float = DEFAULT_TRIM_EPS) -> PoseSequence:
    """Drop leading/trailing frames with no hand movement.

    Frame t (t >= 1) moves when the largest hand-keypoint displacement versus
    frame t-1 is at least eps. The kept window is [first_motion - 1,
    last_motion], so one resting boundary frame survives at the front; this
    makes the operation idempotent. A fully still sequence keeps only its
    middle frame.
    """
    if s.num_frames == 1:
        return s.copy()
    hands = s.frames[:, HAND_KEYPOINTS]
    disp = np.linalg.norm(hands[1:] - hands[:-1], axis=2).max(axis=1)
    moving = np.flatnonzero(disp >= eps) + 1
    if moving.size == 0:
        mid = s.num_frames // 2
        return PoseSequence(s.id, s.fps, s.frames[mid:mid + 1].copy(),
                            s.validity[mid:mid + 1].copy())
    start = max(int(moving[0]) - 1, 0)
    stop = int(moving[-1]) + 1
    return PoseSequence(s.id, s.fps, s.frames[start:stop].copy(),
                        s.validity[start:stop].copy())


# ---------------------------------------------------------------------------
# Augmentation and subsampling
# ---------------------------------------------------------------------------


def augment(s: PoseSequence, cfg: AugmentationConfig,
            rng: np.random.Generator) -> PoseSequence:
    """Frame masking, global scaling, per-keypoint jitter, Gaussian noise.

    Applied in that order; a pure function of (s, cfg, rng state). Jitter is
    one (50, 2) offset shared by all frames, noise is independent per value.
    Invalid keypoints stay exactly (0, 0).
    """
    T = s.num_frames
    frames = s.frames.copy()
    validity = s.validity.copy()

    masked = rng.random(T) < cfg.mask_prob
    frames[masked] = 0.0
    validity[masked] = False

    scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    jitter = rng.normal(0.0, cfg.jitter_std, size=(NUM_KEYPOINTS, 2))
    noise = rng.normal(0.0, cfg.noise_std, size=(T, NUM_KEYPOINTS, 2))

    frames[validity] = frames[validity] * scale
    frames[validity] += np.broadcast_to(jitter, frames.shape)[validity]
    frames[validity] += noise[validity]
    return PoseSequence(s.id, s.fps, frames, validity)


def subsample_to_cap(s: PoseSequence, max_frames: int) -> PoseSequence:
    """Uniform temporal subsampling that preserves the first and last frame."""
    if max_frames < 1:
        raise PoseSchemaError(f"max_frames must be >= 1, got {max_frames}")
    T = s.num_frames
    if T <= max_frames:
        return s
    if max_frames == 1:
        idx = np.array([0])
    else:
        idx = np.array([
            int(round(i * (T - 1) / (max_frames - 1))) for i in range(max_frames)
        ])
    return PoseSequence(s.id, s.fps, s.frames[idx].copy(), s.validity[idx].copy())


# ---------------------------------------------------------------------------
# Batching and splitting
# ---------------------------------------------------------------------------


def collate_batch(samples: list[PairSample], max_sentence: int, max_query: int) -> Batch:
    """Cap sequence lengths, then right-pad with zero frames to batch maxima."""
    if not samples:
        raise DegenerateBatchError("collate_batch needs at least one sample")
    sentences = [subsample_to_cap(p.sentence, max_sentence) for p in samples]
    queries = [subsample_to_cap(p.query, max_query) for p in samples]
    s_len = np.array([s.num_frames for s in sentences], dtype=np.int64)
    q_len = np.array([q.num_frames for q in queries], dtype=np.int64)
    B = len(samples)
    s_frames = np.zeros((B, int(s_len.max()), NUM_KEYPOINTS, 2))
    q_frames = np.zeros((B, int(q_len.max()), NUM_KEYPOINTS, 2))
    for i, (seq, q) in enumerate(zip(sentences, queries)):
        s_frames[i, :seq.num_frames] = seq.frames
        q_frames[i, :q.num_frames] = q.frames
    labels = np.array([float(p.label) for p in samples])
    return Batch(s_frames, q_frames, s_len, q_len, labels)


def split_train_val(samples: list, ratio: float, seed: int) -> tuple[list, list]:
    """Deterministic shuffled split; train size is round(n * ratio).

    round() gives 25,432 pairs -> 20,346 / 5,086 at ratio 0.8.
    """
    if not 0.0 < ratio < 1.0:
        raise DegenerateBatchError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(samples)
    if n < 2:
        raise DegenerateBatchError(f"cannot split {n} samples")
    n_train = int(round(n * ratio))
    n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]
    return train, val
