import pytest
from hypothesis import settings

from ximp.synthetic import random_molecules

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def corpus():
    """200 generated molecules, a few with disconnected fragments."""
    return random_molecules(200, seed=2024, max_units=6, allow_fragments=True)


@pytest.fixture(scope="session")
def small_corpus():
    """Molecules of at most 12 atoms."""
    return random_molecules(100, seed=11, max_units=3, max_atoms=12)
