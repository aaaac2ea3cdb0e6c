import pytest

from rulehop import load_triples

FAMILY_LINES = [
    "tom\thasBrother\tbob",
    "bob\thasChild\tann",
    "bob\tisMarriedTo\tsue",
]


@pytest.fixture
def family_graph():
    """Four entities, three base relations, no inverse edges."""
    return load_triples(FAMILY_LINES)


@pytest.fixture
def family_graph_inv(family_graph):
    return family_graph.with_inverses()
