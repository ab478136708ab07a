import numpy as np
import pytest

from balltrack.colorcal import calibrate
from balltrack.synth import SceneObject, SceneSpec, render

RED = (200, 30, 30)


def red_training_spec(seed: int = 11) -> SceneSpec:
    # A little noise and shading so the learned chroma support has some width.
    return SceneSpec(
        160,
        120,
        objects=(SceneObject("disk", RED, (80.3, 60.2), radius=30),),
        noise_sigma=6.0,
        luminance_ramp=0.2,
        seed=seed,
    )


@pytest.fixture(scope="session")
def red_lut():
    return calibrate(render(red_training_spec())[0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, passed, detail)``."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"AC{number:<2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
