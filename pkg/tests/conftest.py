from __future__ import annotations

from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return FIXTURES / "corpus"


@pytest.fixture(scope="session")
def feedback_dir() -> Path:
    return FIXTURES / "feedback"


def read_fixture(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")
