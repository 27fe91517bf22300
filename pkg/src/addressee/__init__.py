"""Addressee estimation at desk scale.

Synthetic multi-party speaker-behavior generation, a from-scratch
multimodal CNN+LSTM sequence classifier, streaming deployment, and a full
evaluation harness, all driven by the ``addressee`` command-line tool.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    AddresseeClass,
    Estimate,
    FaceCrop,
    Frame,
    PoseKeypoints,
    argmax_class,
    probs_from_log,
)
