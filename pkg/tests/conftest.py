import os

os.environ.setdefault("QBM_PROGRESS", "0")

import pytest

from qbm.spectrum import SpectralModel


@pytest.fixture
def ohmic():
    return SpectralModel.ohmic(1.0, 1.0, 0.1, 20.0)


@pytest.fixture
def ohmic_warm():
    return SpectralModel.ohmic(1.0, 1.0, 0.1, 20.0, T=1.0)


@pytest.fixture
def sub_ohmic():
    return SpectralModel.sub_ohmic(1.0, 1.0, 0.25)


@pytest.fixture
def supra():
    return SpectralModel.supra_ohmic(1.0, 1.0, 0.5, 10.0)
