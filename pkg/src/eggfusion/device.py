"""Compute-device selection for torch backends."""

import os

DEVICE_ENV = "EGGFUSION_DEVICE"


def get_device() -> str:
    """Device string from ``EGGFUSION_DEVICE`` (default ``cpu``)."""
    return os.environ.get(DEVICE_ENV, "cpu")
