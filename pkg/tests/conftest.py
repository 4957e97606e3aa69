import pytest

from synthforge.backends import build_provider_bundle
from synthforge.backends.simulator import SimulatorFixtures


@pytest.fixture
def bundle_factory():
    """Simulated provider bundles with optional fixture tables."""

    def make(seed=0, dim=128, fixtures=None):
        bundle = build_provider_bundle({"embedding_dim": dim}, "simulated", seed)
        if fixtures is not None:
            bundle.text.state.fixtures = fixtures
        return bundle

    return make


@pytest.fixture
def vocab_file(tmp_path):
    def make(names, filename="classes.txt"):
        path = tmp_path / filename
        path.write_text("\n".join(names) + "\n", encoding="utf-8")
        return path

    return make


@pytest.fixture
def fixtures():
    return SimulatorFixtures()
