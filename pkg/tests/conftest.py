import pytest

from skincal.geometry import forearm_layout
from skincal.pipeline import calibrate, simulate_log
from skincal.sim import SimConfig, apply_noise_preset

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def quiet_session():
    """Noise-free forearm calibration at the default seed."""
    session = simulate_log(forearm_layout(), apply_noise_preset(SimConfig(seed=0), "off"))
    calibrate(session)
    return session


@pytest.fixture(scope="session")
def noisy_session():
    """Forearm calibration with the default (paper) noise levels."""
    session = simulate_log(forearm_layout(), apply_noise_preset(SimConfig(seed=0), "paper"))
    calibrate(session)
    return session


@pytest.fixture
def acceptance_line():
    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
