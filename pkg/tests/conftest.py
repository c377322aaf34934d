import os
from pathlib import Path

import pytest

from synthetic import make_fleet_files

ACCEPTANCE_RESULTS = []


def fd001_dir():
    """Directory holding the real FD001 files, or None."""
    candidates = [os.environ.get("RUL_DATA_DIR"), Path(__file__).resolve().parents[1] / "data" / "CMAPSSData"]
    for c in candidates:
        if c and (Path(c) / "train_FD001.txt").is_file():
            return Path(c)
    return None


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cmapss")
    make_fleet_files(d)
    return d


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
