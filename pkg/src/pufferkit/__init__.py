"""Pufferkit: mutual-information Pufferfish privacy toolkit."""

__version__ = "0.3.0"
__author__ = "Pufferkit Team"
__description__ = (
    "Noise calibration, privacy conversions, composition, SMI auditing "
    "and private mean estimation under mutual-information Pufferfish privacy"
)
