import importlib.resources

import numpy as np
import pytest

from gaitopt.rigidbody import RigidBodyModel, RigidBodySystem

MODEL_DIR = importlib.resources.files("gaitopt") / "data" / "models"


def load_model(name: str) -> RigidBodyModel:
    return RigidBodyModel.from_file(MODEL_DIR / f"{name}.json")


@pytest.fixture(scope="session")
def planar_quadruped():
    return load_model("planar_quadruped")


@pytest.fixture(scope="session")
def spatial_quadruped():
    return load_model("spatial_quadruped")


@pytest.fixture(scope="session")
def hopper():
    return load_model("planar_hopper")


@pytest.fixture(scope="session")
def cartpole():
    return load_model("cartpole")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(model, rng, scale=0.3):
    """Random configuration around the default with the base lifted off the ground."""
    x = model.default_state.copy()
    x[: model.nv] += scale * rng.uniform(-1, 1, model.nv)
    x[model.nv:] = rng.uniform(-1, 1, model.nv)
    if model.floating_base != "fixed":
        x[model.n_base - 1] += 1.0
    return x


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def _report(criterion: int, passed: bool, detail: str):
        ACCEPTANCE_LINES.append((criterion, f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
