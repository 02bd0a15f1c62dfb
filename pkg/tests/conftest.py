import os

import pytest
from hypothesis import HealthCheck, settings

from rydloss.medium import from_experiment_units, load_preset

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def paper():
    """Correlation-map simulation parameters (Omega_c/2pi = 25 MHz, gamma_s/2pi = 0.3 MHz)."""
    return load_preset("paper")


@pytest.fixture
def experiment():
    """Measured parameters (Omega_c/2pi = 23.5 MHz, gamma_s/2pi = 0.4 MHz)."""
    return load_preset("experiment")


@pytest.fixture
def operating_point():
    """Dispersion operating point with g/2pi = 1000 MHz."""
    return from_experiment_units({
        "omega_c_MHz": 23.5, "gamma_MHz": 7.0, "gamma_s_MHz": 0.4, "delta_MHz": 25.0,
        "delta_s_MHz": 0.0, "OD": 37.0, "sigma_z_um": 40.0, "g_MHz": 1000.0,
    })


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
