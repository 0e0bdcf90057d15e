import io

import numpy as np
import pytest
from PIL import Image

from coeffcrypt import corpus
from coeffcrypt.codec import decode_jpeg


@pytest.fixture(scope="session")
def desk():
    """20 baseline JPEGs, sizes up to 384x256, alternating 4:4:4 and 4:2:0."""
    return corpus.desk_corpus(20, seed=0)


@pytest.fixture(scope="session")
def desk_images(desk):
    return [(name, data, decode_jpeg(data)) for name, data in desk]


@pytest.fixture(scope="session")
def small_images(desk_images):
    # the five smallest, for tests that loop a lot
    return sorted(desk_images, key=lambda t: len(t[1]))[:5]


@pytest.fixture(scope="session")
def toy_small():
    return corpus.toy_corpus(categories=4, per_category=5, size=(64, 48), seed=3)


@pytest.fixture(scope="session")
def toy_acceptance():
    """The 100-image labeled corpus used by the retrieval criteria."""
    return corpus.toy_corpus(size=(256, 192), subsampling=2)


def pillow_decode(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        im.load()
        return np.asarray(im)


ACCEPTANCE_LINES = []


@pytest.fixture()
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""
    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
