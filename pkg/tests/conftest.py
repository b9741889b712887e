import os
from pathlib import Path

import numpy as np
import pytest

from deiste.data import load_tsv

_ACCEPTANCE = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if call.when == "setup" and call.excinfo is not None and call.excinfo.errisinstance(pytest.skip.Exception):
        _ACCEPTANCE[number] = ("SKIP", title, str(call.excinfo.value))
    elif call.when == "call":
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if call.excinfo is None:
            _ACCEPTANCE[number] = ("PASS", title, detail)
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            _ACCEPTANCE[number] = ("SKIP", title, str(call.excinfo.value))
        else:
            _ACCEPTANCE[number] = ("FAIL", title, detail or call.excinfo.exconly().splitlines()[0])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] {number}. {title}" + (f" -- {detail}" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _scitail_file(root, split):
    for name in (f"scitail_1.0_{split}.tsv", f"{split}.tsv"):
        p = Path(root) / name
        if p.exists():
            return p
    return None


@pytest.fixture(scope="session")
def scitail():
    """SciTail splits from ``$DEISTE_SCITAIL_DIR`` (tsv_format files)."""
    root = os.environ.get("DEISTE_SCITAIL_DIR")
    if not root:
        pytest.skip("SciTail not available: set DEISTE_SCITAIL_DIR to the tsv_format directory")
    paths = {s: _scitail_file(root, s) for s in ("train", "dev", "test")}
    if not all(paths.values()):
        pytest.skip(f"SciTail train/dev/test TSVs not all found under {root}")
    return {s: load_tsv(p) for s, p in paths.items()}
