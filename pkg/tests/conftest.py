import numpy as np
import pytest

from relatt.graph import KnowledgeGraph, Vocabulary

from oracles import random_graph


def make_graph(triples, n, k):
    return KnowledgeGraph(Vocabulary(f"e{i}" for i in range(n)),
                          Vocabulary(f"r{i}" for i in range(k)),
                          np.asarray(triples, dtype=np.int64).reshape(-1, 3))


@pytest.fixture
def small_graph():
    rng = np.random.default_rng(3)
    return make_graph(random_graph(rng, 12, 3, 30), 12, 3)


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        p = tmp_path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8")
        return p
    return _write


# Filled by test_acceptance.py; one line per criterion, shown after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
