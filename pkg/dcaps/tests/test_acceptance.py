"""Desk-scale end-to-end runs on the seeded toy set.

Minutes, not seconds: deselected by default, run with ``pytest -m slow``.
"""

import pytest

from dcaps.data.manifest import load_manifest
from dcaps.data.toy import generate_toy_dataset, write_toy_dataset
from dcaps.network.config import desk_config
from dcaps.training.crossval import recon_variants, run_ablation, run_cross_validation
from dcaps.training.trainer import TrainConfig

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def toy_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return load_manifest(write_toy_dataset(root, generate_toy_dataset(100, 3, seed=0, size=(64, 80))))


def test_ten_fold_crossval_reaches_ninety_percent(toy_manifest, tmp_path):
    result = run_cross_validation(toy_manifest, 2, desk_config(), TrainConfig(epochs=20, fold_count=10),
                                  out_dir=tmp_path, threads=4)
    assert result.report["All Polyps"].units == 100
    assert result.report["All Polyps"].metrics.acc >= 0.90
    initial, final = result.recon_means()
    assert final < 0.5 * initial


def test_recon_ablation_completes(toy_manifest, tmp_path):
    rows = run_ablation(toy_manifest, 2, recon_variants(desk_config()),
                        TrainConfig(epochs=20, fold_count=10), out_dir=tmp_path, threads=4)
    by_name = {r.variant: r.to_dict() for r in rows}
    assert by_name["no-recon"]["all_polyps"]["acc"] is not None
    assert by_name["recon"]["recon_mse_final"] < 0.5 * by_name["recon"]["recon_mse_initial"]
