import pytest

from fleetlife.dataset import CleaningConfig, clean
from fleetlife.synth import FleetConfig, generate_fleet


@pytest.fixture(scope="session")
def small_fleet():
    """A 3000-unit synthetic fleet, cleaned, with its ground truth."""
    ds, gt = generate_fleet(FleetConfig(n_subjects=3000, seed=11))
    cleaned, report = clean(ds, CleaningConfig())
    return ds, cleaned, gt, report


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
