from importlib import resources

import pytest

from kalpha import load_csv


def fixture_matrix(mode="categorical"):
    with resources.as_file(resources.files("kalpha.fixtures") / "krippendorff_nominal.csv") as p:
        return load_csv(p, missing_token=".", value_mode=mode, header=True)


@pytest.fixture
def kripp():
    return fixture_matrix()


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.LEDGER:
        terminalreporter.section("acceptance")
        for line in sorted(test_acceptance.LEDGER, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
