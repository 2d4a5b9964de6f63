"""Behaviour of the trained reference model (shares the session ablation run)."""

import numpy as np
import pytest

from antgan import models as M
from antgan import phantoms as P
from antgan import trainer as TR

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def full_model(reference_run, reference_dataset):
    out, _ = reference_run
    pools = P.load_dataset(reference_dataset)
    normals = [s.image[0] for s in pools.test_normal]
    return out / "full", normals


def test_normal_input_passes_through(full_model):
    run, normals = full_model
    outputs = TR.translate(str(run / "model_final.antw"), "a2n", normals)
    diff = np.mean([np.abs(x - y).mean() for x, y in zip(normals, outputs)])
    assert diff < 0.05


def test_normal_cycle_below_trained_cycle_loss(full_model):
    run, normals = full_model
    nets = M.load_networks(run / "model_final.antw")
    back = TR.translate(nets, "a2n", TR.translate(nets, "n2a", normals))
    mae = np.mean([np.abs(x - y).mean() for x, y in zip(normals, back)])
    log = np.array(TR.read_loss_log(run / "losses.csv"))
    l_cc = (log[-100:, 3] + log[-100:, 4]).mean()
    assert mae < l_cc


def test_anomaly_mask_loss_decreases(full_model):
    run, _ = full_model
    log = np.array(TR.read_loss_log(run / "losses.csv"))
    assert log[-100:, 5].mean() < 0.1 * log[:100, 5].mean()
