"""Toolkit for building rationale-annotated visual-QA training datasets.

Pipeline stages: crop augmentation, tool-based rationale generation,
verifier-based filtering and balancing, multi-task dataset emission, and
inference-side post-processing (voting, calculator) with ANLS / relaxed
accuracy metrics.
"""

__version__ = "0.1.0"
