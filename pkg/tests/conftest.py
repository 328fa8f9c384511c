import numpy as np
import pytest

from cascade_edit import synthdata as sd


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 identities x 1 clip x 40 frames; train ids only a handful."""
    root = tmp_path_factory.mktemp("tiny_ds")
    return sd.make_dataset(8, 1, 40, (0.45, 0.05, 0.5), str(root), seed=3)


@pytest.fixture(scope="session")
def sample_clip():
    ident = sd.gen_identity(7)
    clip, lms, audio = sd.gen_clip(ident, 60, 3)
    return ident, clip, lms, audio


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    """Every model trained at the default config (see ``_suite.py``)."""
    import os

    from _suite import SUITE_ENV, build_suite

    root = os.environ.get(SUITE_ENV) or str(tmp_path_factory.mktemp("suite"))
    return build_suite(root)


_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``acceptance(n, ok, detail)`` records the pass/fail line of criterion ``n``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE_LINES[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_ACCEPTANCE_LINES[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[n])
