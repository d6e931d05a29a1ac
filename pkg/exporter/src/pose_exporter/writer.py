"""Serialize pose streams as line-delimited records and validate the schema.

Record shape (one JSON object per line):
    {"id": str, "fps": number > 0, "frames": [[100 floats] x T],
     "validity": [[50 bools] x T],  "face": [[38 floats] x T]?}
Floats are written with repr round-tripping, which keeps far more than the
required 6 significant digits. Validation runs before anything is written,
so a schema violation never leaves a partial file.
"""

from __future__ import annotations

import json

import numpy as np

from . import layout
from .extract import PoseStream


class SchemaError(ValueError):
    pass


def stream_to_record(stream: PoseStream) -> dict:
    T = stream.frames.shape[0]
    rec = {
        "id": stream.id,
        "fps": stream.fps,
        # flatten whatever is there; validate_record rejects wrong widths
        "frames": stream.frames.reshape(T, -1).tolist(),
        "validity": stream.validity.tolist(),
    }
    if stream.face_frames is not None:
        rec["face"] = stream.face_frames.reshape(T, -1).tolist()
    return rec


def validate_record(rec: dict, line: int | None = None) -> None:
    where = f"line {line}: " if line is not None else ""
    if not isinstance(rec, dict):
        raise SchemaError(f"{where}record must be an object")
    for key in ("id", "fps", "frames"):
        if key not in rec:
            raise SchemaError(f"{where}missing field {key!r}")
    if not isinstance(rec["id"], str) or not rec["id"]:
        raise SchemaError(f"{where}id must be a non-empty string")
    try:
        fps = float(rec["fps"])
    except (TypeError, ValueError):
        raise SchemaError(f"{where}fps must be a number") from None
    if fps <= 0:
        raise SchemaError(f"{where}fps must be positive")
    frames = rec["frames"]
    if not frames:
        raise SchemaError(f"{where}frames must hold at least one frame")
    for t, fr in enumerate(frames):
        if len(fr) != layout.FRAME_FEATURES:
            raise SchemaError(
                f"{where}frame {t} has {len(fr)} values, "
                f"expected {layout.FRAME_FEATURES}"
            )
        if not all(isinstance(v, (int, float)) and np.isfinite(v) for v in fr):
            raise SchemaError(f"{where}frame {t} holds non-finite values")
    if "validity" in rec:
        validity = rec["validity"]
        if len(validity) != len(frames) or any(
                len(row) != layout.NUM_KEYPOINTS for row in validity):
            raise SchemaError(f"{where}validity shape does not match frames")
        for t, (fr, row) in enumerate(zip(frames, validity)):
            for k, ok in enumerate(row):
                if not ok and (fr[2 * k] != 0.0 or fr[2 * k + 1] != 0.0):
                    raise SchemaError(
                        f"{where}frame {t} keypoint {k} is invalid "
                        "but not stored as (0, 0)"
                    )


def validate_line(text: str, line: int | None = None) -> dict:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        where = f"line {line}: " if line is not None else ""
        raise SchemaError(f"{where}invalid JSON ({exc.msg})") from exc
    validate_record(rec, line=line)
    return rec


def write_pose_file(streams: list[PoseStream], path) -> None:
    """Validate every stream, then emit the file in one pass."""
    if not streams:
        raise SchemaError("refusing to write an empty pose file")
    records = [stream_to_record(s) for s in streams]
    for i, rec in enumerate(records, start=1):
        validate_record(rec, line=i)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def validate_pose_file(path) -> int:
    """Re-parse a written file; returns the number of records."""
    count = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                validate_line(line, line=lineno)
                count += 1
    return count
