import random
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def paragraph_a() -> str:
    return (DATA / "paragraph_a.txt").read_text()


@pytest.fixture(scope="session")
def paragraph_b() -> str:
    return (DATA / "paragraph_b.txt").read_text()


@pytest.fixture(scope="session")
def paragraph_c() -> str:
    return (DATA / "paragraph_c.txt").read_text()


def random_chunking(rng: random.Random, text: str) -> list[str]:
    """Partition text into random chunks (any boundary, including inside
    annotations and newline runs)."""
    chunks = []
    i = 0
    while i < len(text):
        size = rng.randint(1, max(1, min(len(text) - i, 17)))
        chunks.append(text[i : i + size])
        i += size
    return chunks
