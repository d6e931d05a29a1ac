"""Pose exporter: adapter from videos to the pose-sequence file format."""

__version__ = "0.1.0"

from .extract import ExportConfig, PoseStream, extract_video_poses, landmarks_to_keypoints
from .writer import SchemaError, validate_pose_file, write_pose_file

__all__ = [
    "ExportConfig", "PoseStream", "extract_video_poses", "landmarks_to_keypoints",
    "SchemaError", "validate_pose_file", "write_pose_file",
]
