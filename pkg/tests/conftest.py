import numpy as np
import pytest
from pathlib import Path

from analogrf import cnn, dataio
from analogrf.channel import GeometryParams
from analogrf.phymetrics import SystemParams, lenet_layers

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"


@pytest.fixture(scope="session")
def sp():
    return SystemParams()


@pytest.fixture(scope="session")
def gp():
    return GeometryParams()


@pytest.fixture(scope="session")
def layers():
    return lenet_layers()


@pytest.fixture(scope="session")
def dataset():
    return dataio.ensure_dataset(ARTIFACTS / "data", seed=0)


@pytest.fixture(scope="session")
def model(dataset):
    ARTIFACTS.mkdir(exist_ok=True)
    return cnn.train_or_load(dataset, cnn.TrainConfig(),
                             np.random.default_rng(1),
                             weights_path=ARTIFACTS / "lenet-weights.bin")


@pytest.fixture(scope="session")
def stats(model, dataset):
    return cnn.calibrate_sref(model, dataset["calib_images"])


@pytest.fixture(scope="session")
def harness_overrides():
    return {"data.data_dir": str(ARTIFACTS / "data"),
            "data.weights_path": str(ARTIFACTS / "lenet-weights.bin")}
