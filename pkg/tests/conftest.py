import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

torch.set_num_threads(1)

ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion's outcome.

    Usage: ``with criterion(7, "overfit") as info: ...; info["psnr"] = 31.2``.
    """

    @contextmanager
    def record(number, title):
        info = {}
        t0 = time.perf_counter()
        try:
            yield info
        except BaseException as exc:
            info["error"] = f"{type(exc).__name__}: {' '.join(str(exc).split())[:160]}"
            ACCEPTANCE.append((number, "FAIL", title, time.perf_counter() - t0, info))
            raise
        ACCEPTANCE.append((number, "PASS", title, time.perf_counter() - t0, info))

    return record


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, seconds, info in sorted(ACCEPTANCE, key=lambda r: r[0]):
        extra = " ".join(f"{k}={_fmt(v)}" for k, v in info.items())
        terminalreporter.write_line(f"C{number:<2} {status}  {title} [{seconds:.1f}s] {extra}".rstrip())
