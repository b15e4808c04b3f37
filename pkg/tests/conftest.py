"""Shared fixtures and the acceptance-criterion reporter."""

import numpy as np
import pytest

from dualcloak import AnnotationParser, EmbedderEnsemble, ToyLinearEmbedder


def margin_image(shape=(16, 16, 3), seed=0, lo=0.2, hi=0.8):
    """Random image kept away from 0 and 1 so clamping never fires."""
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, shape)


def suite_image(seed, size=32):
    """Half smooth, half noisy image plus a hair-rectangle annotation.

    The smooth half guarantees the texture mask has genuine zeros; the
    rectangle keeps the hair mask a strict subset of the frame.
    """
    rng = np.random.default_rng(seed)
    half = size // 2
    img = np.empty((size, size, 3))
    ramp = np.linspace(0.3, 0.6, half)[None, :, None]
    img[:, :half] = ramp + rng.uniform(-0.02, 0.02)
    img[:, half:] = rng.uniform(0.25, 0.75, (size, half, 3))
    ann = np.ones((size, size), dtype=np.uint8)
    r0 = rng.integers(2, 12)
    c0 = rng.integers(10, 20)
    ann[r0:r0 + rng.integers(8, 16), c0:c0 + rng.integers(8, 12)] = 17
    return img, ann


def hair_rect_annotation(size=32, rows=slice(4, 20), cols=slice(12, 26)):
    ann = np.ones((size, size), dtype=np.uint8)
    ann[rows, cols] = 17
    return ann


@pytest.fixture(scope="session")
def linear_ensemble():
    return EmbedderEnsemble(
        [ToyLinearEmbedder(name=f"lin{i}", seed=i) for i in (1, 2)]
    )


@pytest.fixture()
def parser32():
    return AnnotationParser(hair_rect_annotation())


# ---------------------------------------------------------------------------
# Acceptance reporting: one pass/fail line per criterion at the end of the run.

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        num, title = marker.args
        _ACCEPTANCE[num] = (title, report.outcome)
    elif marker and report.when == "setup" and report.outcome != "passed":
        num, title = marker.args
        _ACCEPTANCE[num] = (title, report.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    tw = terminalreporter
    tw.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        title, outcome = _ACCEPTANCE[num]
        word = "PASS" if outcome == "passed" else "FAIL"
        tw.write_line(f"criterion {num:2d}: {word}  {title}")
