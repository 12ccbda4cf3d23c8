import warnings

import numpy as np
import pytest

from phonon_forge.cavity import decompose, partition, walled_array
from phonon_forge.crystal import CA40, IonArraySpec, build_coupling_matrix, unit_scale

ACCEPTANCE_LINES = []


def record(criterion, label, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] C{criterion:<2} {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def walled(n_ions, n_s, w, nu_ot, d0=7e-6):
    """(spec, partition, A) for a centred cavity with tweezers at nu_ot * omega0."""
    base = IonArraySpec(CA40, n_ions, d0)
    spec = walled_array(base, n_ions // 2, n_s, w, nu_ot * unit_scale(base))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        part = partition(spec, n_ions // 2, n_s, w)
    return spec, part, build_coupling_matrix(spec)


@pytest.fixture(scope="session")
def cavity_400():
    spec, part, A = walled(400, 1, 1, 5.9)
    return spec, part, A, decompose(A, part)


@pytest.fixture(scope="session")
def cavity_1000():
    spec, part, A = walled(1000, 1, 1, 5.9)
    return spec, part, A, decompose(A, part)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
