"""Tests for per-stage seed derivation."""

import hashlib

import pytest

from ..utils.errors import ContractError
from ..utils.seeding import STAGES, derive_seed


def test_stage_seeds_are_distinct_and_stable():
    seeds = {stage: derive_seed(7, stage) for stage in STAGES}
    assert len(set(seeds.values())) == len(STAGES)
    assert seeds == {stage: derive_seed(7, stage) for stage in STAGES}
    assert derive_seed(8, "train") != seeds["train"]


def test_seed_is_masked_sha256_prefix():
    digest = hashlib.sha256(b"7:synth").digest()
    expected = int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)
    assert derive_seed(7, "synth") == expected
    assert 0 <= expected < 2 ** 63


def test_unknown_stage_rejected():
    with pytest.raises(ContractError):
        derive_seed(7, "saliency")
