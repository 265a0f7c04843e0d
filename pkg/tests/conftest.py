import numpy as np
import pytest

from shapecodes.shapeforge import DatasetConfig, RenderConfig, generate_dataset
from shapecodes.viewgrid import ViewSphereSpec

SMALL_SPEC = ViewSphereSpec(8, (-60.0, -30.0, 0.0, 30.0, 60.0))


@pytest.fixture(scope="session")
def small_dataset():
    """50 objects: 4 seen classes x 10 (7/1/2 split) and 1 unseen class x 10 (7/3), 16 px, 5x8 grid."""
    cfg = DatasetConfig(num_classes=4, instances_per_class=10, val_fraction=0.1, test_fraction=0.2,
                        num_unseen=1, unseen_per_class=10, unseen_test_fraction=0.3)
    return generate_dataset(cfg, SMALL_SPEC, RenderConfig(image_size=16), seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and echo it immediately."""
    def emit(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
