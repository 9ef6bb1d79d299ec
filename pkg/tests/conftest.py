import io

import numpy as np
import pytest

from kgpathqa.graph import KnowledgeGraph, load_kb
from kgpathqa.kge import EmbeddingModel, EmbeddingSpace, KgeFamily


def kb(text):
    return load_kb(io.StringIO(text))


def random_graph(rng, n_nodes, n_relations, n_edges):
    """Random multigraph over ``n_nodes`` entities (self-loops allowed)."""
    rows = [(int(rng.integers(n_nodes)), 2 * int(rng.integers(n_relations)),
             int(rng.integers(n_nodes))) for _ in range(n_edges)]
    return KnowledgeGraph([f"n{i}" for i in range(n_nodes)],
                          [f"r{k}" for k in range(n_relations)], rows)


def random_model(rng, family, n_entities, n_relations, dim, space=None, scale=1.0):
    family = KgeFamily(family)
    if space is None:
        space = "real" if family is KgeFamily.ADDITIVE else "complex"
    sp = EmbeddingSpace(space, dim)

    def draw(n):
        x = rng.normal(0, scale, size=(n, dim))
        if sp.is_complex:
            x = x + 1j * rng.normal(0, scale, size=(n, dim))
        return x

    rel = draw(n_relations)
    if family is KgeFamily.ROTATION:
        rel = rel / np.abs(rel)
    return EmbeddingModel(family, sp, draw(n_entities), rel)


FAMILY_SPACES = [("additive", "real"), ("multiplicative", "real"),
                 ("multiplicative", "complex"), ("rotation", "complex")]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def movie_kg():
    return kb("Inception|directed_by|Christopher_Nolan\n"
              "Inception|starred_actors|Leonardo_DiCaprio\n"
              "Titanic|starred_actors|Leonardo_DiCaprio\n"
              "Titanic|directed_by|James_Cameron\n"
              "Interstellar|directed_by|Christopher_Nolan\n")


def brute_force_walks(kg, source, max_len):
    """Every (relation sequence, end entity) walk of length 1..max_len."""
    out = []
    for length in range(1, max_len + 1):
        frontier = [((), source)]
        for _ in range(length):
            frontier = [(seq + (r,), u) for seq, v in frontier for r, u in kg.neighbors(v)]
        out.extend(frontier)
    return out



ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Append one ``PASS``/``FAIL`` line per acceptance criterion to the run summary."""
    def record(number, ok, detail):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
