"""Pose-based sign spotting: data pipeline, model, training, and benchmark."""

__version__ = "0.1.0"
