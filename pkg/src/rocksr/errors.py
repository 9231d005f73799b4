"""Shared exception types.

DataError covers anything wrong with inputs on disk (unreadable images,
malformed manifests, empty splits); the command line maps it to its own
exit code, distinct from usage errors and training divergence.
"""

from __future__ import annotations


class DataError(Exception):
    """Input data is missing, malformed, or inconsistent."""


class TrainingDiverged(Exception):
    """Training hit non-finite losses or a sustained discriminator blowup."""

    def __init__(self, message: str, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
