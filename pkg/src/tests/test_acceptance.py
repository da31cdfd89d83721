"""
End-to-end runs with the repository configuration (512 images per group).

These take minutes and only run with ``pytest --run-slow``.
"""

from pathlib import Path

import pytest

from .. import main as cli
from ..pipeline.commands import RUN_REPORT_FILE
from ..pipeline.models import load_run_report
from ..utils.errors import EXIT_OK

REPO_CONFIG = str(Path(__file__).resolve().parents[2] / "config" / "config.yaml")

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    roots = []
    for name in ("first", "second"):
        root = tmp_path_factory.mktemp(name)
        assert cli.main(["pipeline", "--config", REPO_CONFIG, "--output-dir", str(root)]) == EXIT_OK
        roots.append(root)
    return roots


def test_default_run_separates_confounded_blocks(default_runs):
    report = load_run_report(default_runs[0] / RUN_REPORT_FILE)
    ratios = (report.training_accuracy, report.attenuation_ratio_bc, report.retention_ratio_ad)
    assert report.n_records == 1024
    assert report.training_accuracy >= 0.95, ratios
    assert report.confounded_feature_count >= 1
    assert report.attenuation_ratio_bc >= 5.0, ratios
    assert report.retention_ratio_ad >= 0.5, ratios
    assert report.refactorization_max_abs_diff <= 1e-10


def test_default_run_is_byte_identical(default_runs):
    first, second = default_runs
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert files
    for relative in files:
        assert (first / relative).read_bytes() == (second / relative).read_bytes(), relative
