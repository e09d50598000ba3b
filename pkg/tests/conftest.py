import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


def random_connected_positions(rng, n, r_comm, box=None, tries=200):
    """Uniform positions in a box, redrawn until the disk graph is connected."""
    from dectrack.graph import build_graph, default_sigma
    box = 0.8 * r_comm * np.sqrt(n) if box is None else box
    for _ in range(tries):
        x = rng.uniform(0, box, size=(n, 2))
        g = build_graph(x, r_comm, default_sigma(r_comm))
        if g.is_connected():
            return x, g
    raise RuntimeError("could not draw a connected configuration")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
