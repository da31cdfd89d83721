"""
Synthetic blob configuration for the confounded two-group dataset

This module defines the image geometry, blob placement and per-group width
distributions, plus the mapping between group labels and training targets.
"""

from typing import Dict, Tuple

# Image geometry
IMAGE_SIZE = 32
HALF = IMAGE_SIZE // 2

# Blob layout: one isotropic Gaussian per quadrant block, centred in the block.
# B and C are the off-diagonal blocks whose widths act as confounders.
BLOCK_IDS = ("A", "B", "C", "D")
BLOB_CENTERS: Dict[str, Tuple[int, int]] = {
    "A": (8, 8),     # top-left
    "B": (8, 24),    # top-right
    "C": (24, 8),    # bottom-left
    "D": (24, 24),   # bottom-right
}
BLOB_AMPLITUDE = 1.0

# Width (sigma, pixels) sampling interval per group
GROUP_SIGMA_RANGES: Dict[int, Tuple[float, float]] = {
    1: (2.0, 6.0),
    2: (4.0, 8.0),
}
GROUPS = (1, 2)

SIGMA_COLUMNS = tuple(f"sigma_{block}" for block in BLOCK_IDS)
DEFAULT_CONFOUNDERS = ("sigma_B", "sigma_C")


def label_to_target(group: int) -> float:
    """
    Convert a group label to a binary training target.

    Args:
        group: 1 or 2

    Returns:
        0.0 for Group 1, 1.0 for Group 2 (the score is the probability of Group 2)
    """
    if group not in GROUPS:
        raise ValueError(f"Group must be one of {GROUPS}, got {group}")
    return float(group - 1)


def score_to_label(score: float) -> int:
    """
    Convert a prediction score to a group label.

    Args:
        score: Probability of Group 2

    Returns:
        2 when score >= 0.5, otherwise 1
    """
    if not 0.0 <= score <= 1.0:
        raise ValueError("Score must be between 0.0 and 1.0")
    return 2 if score >= 0.5 else 1
