import numpy as np
import pytest

from pageann.datasets import clustered_dataset, ground_truth
from pageann.graph import BuildParams, build_vamana, compute_medoid
from pageann.pipeline import train_codes


@pytest.fixture(scope="session")
def small_corpus():
    """2k clustered points with a Vamana graph, PQ codes and 100 held-out queries."""
    base, queries, centers = clustered_dataset(2000, 16, 10, seed=11, n_queries=100)
    graph = build_vamana(base, BuildParams(R=32, L_build=64), seed=3)
    book, codes = train_codes(base, 8, iters=10, seed=5)
    return {
        "base": base,
        "queries": queries,
        "centers": centers,
        "graph": graph,
        "book": book,
        "codes": codes,
        "medoid": compute_medoid(base),
        "truth": ground_truth(base, queries, 10),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def record(request):
    """Log one acceptance line; the lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def _record(num: int, ok: bool, detail: str) -> bool:
        line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append((num, line))
        return ok

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
