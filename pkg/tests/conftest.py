from types import SimpleNamespace

import numpy as np
import pytest

from chip.desknet import capture_activations, reference_net, reference_task, train

# 3x4 matrix whose middle row is 0.9x the first row; per-row CI is known to be
# (0.696, 0.549, 0.827) and its rank is 2.
WORKED_MATRIX = np.array([
    [0.90, 0.80, 1.10, 1.20],
    [0.81, 0.72, 0.99, 1.08],
    [0.80, 0.90, 1.20, 1.10],
])
WORKED_CI = (0.696, 0.549, 0.827)

TRAIN_EPOCHS = 30
TRAIN_SEED = 3


@pytest.fixture(scope="session")
def desknet():
    """Reference task and a trained reference net, shared across the session."""
    task = reference_task()
    data = task.generate()
    net = reference_net()
    result = train(net, task, TRAIN_EPOCHS, lr=0.01, momentum=0.9,
                   seed=TRAIN_SEED, data=data)
    return SimpleNamespace(task=task, data=data, net=result.net,
                           losses=result.epoch_losses, untrained=net)


@pytest.fixture(scope="session")
def desknet_dump(desknet, tmp_path_factory):
    """640-sample activation dump of the trained reference net."""
    root = tmp_path_factory.mktemp("desknet_dump")
    manifest = capture_activations(desknet.net, desknet.task, 640, root,
                                   data=desknet.data)
    return SimpleNamespace(manifest=manifest, root=root)
