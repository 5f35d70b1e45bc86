from pathlib import Path

import pytest

from horizonbench.data import parse_who_csv

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def who_csv_path() -> Path:
    return FIXTURES / "who_sample.csv"


@pytest.fixture(scope="session")
def records(who_csv_path):
    return parse_who_csv(who_csv_path)


@pytest.fixture(scope="session")
def reference_scores_path() -> Path:
    return FIXTURES / "reference_scores.csv"


@pytest.fixture(scope="session")
def reference_ranks_path() -> Path:
    return FIXTURES / "reference_ranks.csv"
