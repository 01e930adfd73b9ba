from pathlib import Path

import numpy as np
import pytest

from metapersuasion.mpp.env import load_spec
from metapersuasion.obp.game import load_game

DATA = Path(__file__).resolve().parents[1] / "src" / "metapersuasion" / "data"


@pytest.fixture(scope="session")
def two_state_spec():
    return load_spec(DATA / "mpp_two_state.json")


@pytest.fixture(scope="session")
def judge_game():
    game, _ = load_game(DATA / "obp_judge.json")
    return game


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record and print one acceptance verdict line."""

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
