"""One test per acceptance criterion; each prints a single pass/fail line."""

import pytest

from survivorlab.acceptance import CRITERIA, DEFAULT_SEED, run_criterion

from conftest import ACCEPTANCE_LINES


@pytest.mark.parametrize("number", range(1, len(CRITERIA) + 1))
def test_criterion(number):
    res = run_criterion(number, DEFAULT_SEED, jobs=1)
    line = res.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, res.detail
