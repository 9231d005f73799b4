import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Print the end-to-end scorecard collected by test_acceptance.py."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "_SCORECARD", None) if mod else None
    if lines:
        terminalreporter.write_sep("-", "scorecard")
        for line in lines:
            terminalreporter.write_line(line)
