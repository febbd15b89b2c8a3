import numpy as np
import pytest
import torch

from alphagan.generator import GeneratorConfig

ACCEPTANCE_FILE = "test_acceptance.py"
_acceptance: dict[str, str] = {}


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_gen_cfg():
    return GeneratorConfig(width_multiplier=0.25)


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.failed:
        if _acceptance.get(name) != "FAIL":
            _acceptance[name] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        label = name.removeprefix("test_").replace("_", " ")
        terminalreporter.write_line(f"{_acceptance[name]:4s}  {label}")
