"""Run a holistic pose estimator over videos and collect keypoint streams.

The estimator itself is a black box behind the ``engine`` argument: anything
with a ``process(frame) -> result`` method works, where the result carries
optional ``pose_landmarks``, ``left_hand_landmarks``, ``right_hand_landmarks``
and ``face_landmarks`` collections of (x, y[, visibility]) points in
normalized image coordinates. By default the MediaPipe Holistic solution is
constructed lazily so the package imports without the toolkit installed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import layout

log = logging.getLogger("pose_exporter")


@dataclass
class ExportConfig:
    videos: list[str]
    out_path: str
    fps_override: float | None = None
    min_detection_confidence: float = 0.5
    with_face: bool = False

    def __post_init__(self):
        if not 0.0 <= self.min_detection_confidence <= 1.0:
            raise ValueError(
                f"min detection confidence must be in [0, 1], "
                f"got {self.min_detection_confidence}"
            )


@dataclass
class PoseStream:
    """One video's extracted keypoints, ready for the writer."""

    id: str
    fps: float
    frames: np.ndarray            # (T, 50, 2)
    validity: np.ndarray          # (T, 50) bool
    face_frames: np.ndarray | None = None  # (T, 19, 2) when exported


def _points(collection) -> list | None:
    if collection is None:
        return None
    landmark = getattr(collection, "landmark", collection)
    return list(landmark)


def landmarks_to_keypoints(result, min_confidence: float,
                           with_face: bool = False):
    """Map one holistic result to the 50-point layout (+ optional face block)."""
    coords = np.zeros((layout.NUM_KEYPOINTS, 2))
    valid = np.zeros(layout.NUM_KEYPOINTS, dtype=bool)

    for block, attr in ((layout.LEFT_HAND, "left_hand_landmarks"),
                        (layout.RIGHT_HAND, "right_hand_landmarks")):
        pts = _points(getattr(result, attr, None))
        if pts is not None and len(pts) == layout.HAND_POINTS:
            for offset, p in enumerate(pts):
                idx = block.start + offset
                coords[idx] = (p.x, p.y)
                valid[idx] = True

    pose_pts = _points(getattr(result, "pose_landmarks", None))
    if pose_pts is not None:
        def usable(p):
            return getattr(p, "visibility", 1.0) >= min_confidence

        for target, source in layout.POSE_LANDMARK_SOURCES.items():
            if source < len(pose_pts) and usable(pose_pts[source]):
                coords[target] = (pose_pts[source].x, pose_pts[source].y)
                valid[target] = True
        if (layout.RIGHT_HIP_SOURCE < len(pose_pts)
                and usable(pose_pts[layout.LEFT_HIP_SOURCE])
                and usable(pose_pts[layout.RIGHT_HIP_SOURCE])):
            lh = pose_pts[layout.LEFT_HIP_SOURCE]
            rh = pose_pts[layout.RIGHT_HIP_SOURCE]
            coords[layout.MID_HIP] = ((lh.x + rh.x) / 2.0, (lh.y + rh.y) / 2.0)
            valid[layout.MID_HIP] = True

    coords[~valid] = 0.0

    face = None
    if with_face:
        face = np.zeros((layout.NUM_FACE_POINTS, 2))
        face_pts = _points(getattr(result, "face_landmarks", None))
        if face_pts is not None:
            for i, source in enumerate(layout.FACE_LANDMARK_SOURCES):
                if source < len(face_pts):
                    face[i] = (face_pts[source].x, face_pts[source].y)
    return coords, valid, face


def _default_engine(min_confidence: float):
    try:
        import mediapipe as mp
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError(
            "mediapipe is not installed; install pose-exporter[toolkit] "
            "or pass an explicit engine"
        ) from exc
    return mp.solutions.holistic.Holistic(
        static_image_mode=False,
        min_detection_confidence=min_confidence,
    )


def _read_video(path: str):
    """Yield (frame, fps); raises on undecodable input."""
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError(
            "opencv is not installed; install pose-exporter[toolkit] "
            "or pass pre-decoded frames"
        ) from exc
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        raise IOError(f"cannot decode {path}")
    fps = cap.get(cv2.CAP_PROP_FPS) or 25.0
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            yield frame, fps
    finally:
        cap.release()


def unique_stem(path: str, used: set[str]) -> str:
    stem = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    candidate = stem
    suffix = 1
    while candidate in used:
        suffix += 1
        candidate = f"{stem}_{suffix}"
    used.add(candidate)
    return candidate


def extract_video_poses(cfg: ExportConfig, engine=None,
                        frame_reader=_read_video) -> list[PoseStream]:
    """Extract one PoseStream per decodable video with >= 1 detected frame."""
    own_engine = engine is None
    if own_engine:
        engine = _default_engine(cfg.min_detection_confidence)
    streams: list[PoseStream] = []
    used_ids: set[str] = set()
    try:
        for path in cfg.videos:
            sid = unique_stem(path, used_ids)
            frames, valids, faces = [], [], []
            fps = cfg.fps_override or 25.0
            try:
                for frame, video_fps in frame_reader(path):
                    if cfg.fps_override is None:
                        fps = video_fps
                    result = engine.process(frame)
                    coords, valid, face = landmarks_to_keypoints(
                        result, cfg.min_detection_confidence, cfg.with_face)
                    frames.append(coords)
                    valids.append(valid)
                    if face is not None:
                        faces.append(face)
            except (IOError, OSError) as exc:
                log.warning("skipping %s: %s", path, exc)
                continue
            if not frames or not np.any(valids):
                log.warning("no detected keypoints in %s; skipping", path)
                continue
            streams.append(PoseStream(
                id=sid, fps=float(fps),
                frames=np.stack(frames), validity=np.stack(valids),
                face_frames=np.stack(faces) if faces else None,
            ))
    finally:
        if own_engine and hasattr(engine, "close"):
            engine.close()
    return streams
