"""pose-export: videos in, pose-sequence file out."""

from __future__ import annotations

import argparse
import glob
import logging
import sys

from .extract import ExportConfig, extract_video_poses
from .writer import SchemaError, write_pose_file


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pose-export",
        description="Extract hand/body pose keypoints from videos into the "
                    "line-delimited pose-sequence format.",
    )
    parser.add_argument("--videos", required=True,
                        help="video path or glob, e.g. 'clips/*.mp4'")
    parser.add_argument("--out", required=True, help="output pose file")
    parser.add_argument("--with-face", action="store_true", dest="with_face",
                        help="also store the 19 facial landmarks (extra field)")
    parser.add_argument("--min-confidence", type=float, default=0.5,
                        dest="min_confidence")
    parser.add_argument("--fps", type=float, default=None,
                        help="override the container frame rate")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    paths = sorted(glob.glob(args.videos)) or [args.videos]
    cfg = ExportConfig(
        videos=paths, out_path=args.out, fps_override=args.fps,
        min_detection_confidence=args.min_confidence, with_face=args.with_face,
    )
    try:
        streams = extract_video_poses(cfg)
        if not streams:
            print("error: no usable videos", file=sys.stderr)
            return 3
        write_pose_file(streams, args.out)
    except (RuntimeError, SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(streams)} sequences to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
