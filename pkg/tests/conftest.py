import numpy as np
import pytest

from bitgear.graph import InteractionGraph

ACCEPTANCE_LINES: list[str] = []


def random_graph(n_users: int, n_items: int, density: float, seed: int) -> InteractionGraph:
    """Random bipartite graph where every node has degree >= 1."""
    rng = np.random.default_rng(seed)
    adj = rng.random((n_users, n_items)) < density
    for u in range(n_users):
        if not adj[u].any():
            adj[u, rng.integers(n_items)] = True
    for i in range(n_items):
        if not adj[:, i].any():
            adj[rng.integers(n_users), i] = True
    users, items = np.nonzero(adj)
    return InteractionGraph.from_edges(n_users, n_items, users, items)


@pytest.fixture
def small_graph():
    return random_graph(5, 5, 0.4, seed=3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
