import numpy as np
import pytest

from bodykit.procgen import Dataset, build_template, gen_dataset

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []
    config.addinivalue_line("markers", "acceptance: end-to-end criteria on the 2000-subject dataset (slow)")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """record(n, ok, detail): one PASS/FAIL line per criterion, echoed in the summary."""
    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[VERDICTS].append(line)
        print(line)
        return ok
    return record


@pytest.fixture(scope="session")
def template():
    return build_template()


@pytest.fixture(scope="session")
def small_ds(tmp_path_factory, template):
    out = tmp_path_factory.mktemp("ds64")
    gen_dataset(64, seed=3, out_path=out, template=template)
    return Dataset(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
