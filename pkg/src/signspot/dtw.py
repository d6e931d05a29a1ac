"""Dynamic-time-warping utilities.

Used as an independent oracle: a brute-force scan of the query against every
sentence window decides presence without consulting the learned model, which
lets generated labels be cross-checked.
"""

from __future__ import annotations

import numpy as np

from .posedata import HAND_KEYPOINTS, PoseSequence, normalize_sequence


def hand_features(seq: PoseSequence) -> np.ndarray:
    """Per-frame feature vectors: the 42 hand keypoints, flattened."""
    return seq.frames[:, HAND_KEYPOINTS].reshape(seq.num_frames, -1)


def dtw_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Classic DTW with Euclidean frame distance, normalized by (Ta + Tb)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ta, tb = len(a), len(b)
    if ta == 0 or tb == 0:
        raise ValueError("dtw_distance needs non-empty sequences")
    diff = a[:, None, :] - b[None, :, :]
    cost = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    acc = np.full((ta + 1, tb + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, ta + 1):
        row = acc[i]
        prev = acc[i - 1]
        ci = cost[i - 1]
        for j in range(1, tb + 1):
            row[j] = ci[j - 1] + min(prev[j], row[j - 1], prev[j - 1])
    return float(acc[ta, tb]) / (ta + tb)


def query_match_score(sentence: PoseSequence, query: PoseSequence,
                      warps=(0.8, 1.0, 1.25), step: int = 2) -> float:
    """Best (lowest) DTW distance of the query against sentence windows.

    Both sequences are shoulder-normalized first, so global offset/scale
    differences do not count. Window lengths cover the expected warp range.
    """
    s = hand_features(normalize_sequence(sentence))
    q = hand_features(normalize_sequence(query))
    ts, tq = len(s), len(q)
    best = np.inf
    seen = set()
    for w in warps:
        win = max(2, int(round(tq * w)))
        if win >= ts:
            starts = [0]
            win = ts
        else:
            starts = list(range(0, ts - win + 1, step))
            if starts[-1] != ts - win:
                starts.append(ts - win)
        for start in starts:
            key = (start, win)
            if key in seen:
                continue
            seen.add(key)
            d = dtw_distance(q, s[start:start + win])
            if d < best:
                best = d
    return float(best)


def matcher_predict(sentence: PoseSequence, query: PoseSequence,
                    threshold: float) -> int:
    """Presence verdict from the brute-force window scan."""
    return int(query_match_score(sentence, query) < threshold)
