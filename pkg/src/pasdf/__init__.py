"""Pose-aligned signed-distance-field pipeline for point-cloud anomaly detection."""

__version__ = "0.1.0"
