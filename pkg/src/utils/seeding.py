"""Sub-seed derivation so every stage draws from its own reproducible stream."""

import hashlib

from .errors import ContractError

STAGES = ("synth", "init", "train")


def derive_seed(seed: int, stage: str) -> int:
    """
    Derive the random stream seed of a pipeline stage from the run seed.

    The stage name is hashed together with the seed, so running a stage on its
    own with the same seed reproduces the stream it gets inside ``pipeline``.

    Raises:
        ContractError: ``stage`` is not one of ``STAGES``.
    """
    if stage not in STAGES:
        raise ContractError(f"unknown seed stage {stage!r}; expected one of {STAGES}")
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)
