import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import benchmark
    if not benchmark.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, title, passed, detail in sorted(benchmark.RESULTS, key=lambda r: r[0]):
        line = f"[{'PASS' if passed else 'FAIL'}] C{criterion} {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
