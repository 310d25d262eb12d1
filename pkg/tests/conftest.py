import sys

import numpy as np
import pytest
from hypothesis import settings

from seqdx.config import RunConfig
from seqdx.env import PatientRecord, TestCatalog
from seqdx.synth import SyntheticConfig, generate_dataset

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def catalog():
    return TestCatalog()


@pytest.fixture(scope="session")
def decisive_model():
    return RunConfig.load("one-decisive-test").build_model()


@pytest.fixture(scope="session")
def decisive_data(decisive_model):
    return generate_dataset(SyntheticConfig(600, seed=3), decisive_model)


@pytest.fixture(scope="session")
def noise_model():
    return RunConfig.load("uniform-noise").build_model()


@pytest.fixture(scope="session")
def noise_data(noise_model):
    return generate_dataset(SyntheticConfig(400, seed=5), noise_model)


@pytest.fixture
def record():
    return PatientRecord(
        id="p1",
        diagnosis="appendicitis",
        history="Right lower quadrant pain since yesterday.",
        tests={"Ultrasound": "enlarged appendix", "CT": "periappendiceal fat stranding", "Urinalysis": "normal"},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
