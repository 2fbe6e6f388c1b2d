"""
Desk-scale ablation on the phantom set: 300 train normals, 100 + 100 test
images at 64x64, three seeds. Takes tens of minutes on a CPU; enable with
PROXYAD_RUN_SLOW=1.
"""

import numpy as np
import pandas as pd
import pytest

from models.config import default_config, override
from models.experiments import cmd_ablate

SEEDS = (0, 1, 2)
ROWS = (1, 4, 8)


@pytest.fixture(scope="module")
def ladder(tmp_path_factory):
    tables = []
    for seed in SEEDS:
        config = override(default_config(), "train", "seed", seed)
        config = override(config, "train", "epochs", 15)
        config = config.with_output(tmp_path_factory.mktemp(f"seed{seed}"))
        tables.append(cmd_ablate(config, rows=list(ROWS)))
    return pd.concat(tables).groupby("row").mean(numeric_only=True)


@pytest.mark.slow
def test_final_model_beats_the_bridge_and_the_autoencoder(ladder):
    auc = ladder["auc"]
    assert auc[8] > auc[4] > auc[1]
    assert auc[8] - auc[1] >= 0.05


@pytest.mark.slow
def test_final_model_has_the_larger_gap(ladder):
    assert ladder.loc[8, "gap"] > ladder.loc[1, "gap"]


@pytest.mark.slow
def test_latent_and_pixel_space_scores_are_both_reported(ladder):
    assert np.isfinite(ladder.loc[8, "auc_a_img"])
    assert np.isfinite(ladder.loc[8, "auc_a_img_pixelspace"])
