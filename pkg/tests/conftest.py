import numpy as np
import pytest
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vspwkit.tensor_io import ProbMap, SegMask


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_probmap(rng, c, h, w, dtype=np.float32):
    logits = rng.normal(size=(c, h, w))
    e = np.exp(logits - logits.max(axis=0))
    return ProbMap((e / e.sum(axis=0)).astype(dtype))


def masks(max_side=8, max_class=5, ignore=True):
    elements = st.integers(0, max_class)
    if ignore:
        elements = st.one_of(elements, st.just(255))
    shape = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return arrays(np.uint8, shape, elements=elements).map(SegMask)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, text = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}")
