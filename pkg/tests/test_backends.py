"""Provider descriptors, the seeded simulator, and the HTTP client with fakes."""

import base64
import json

import numpy as np
import pytest

from synthforge.backends.base import ProviderDescriptor, TextRequest, build_provider_bundle
from synthforge.backends.remote import RemoteProvider, ResponseCache
from synthforge.backends.simulator import SimulatedProvider, SimulatorFixtures, SimulatorState
from synthforge.errors import (
    ConfigError,
    GridError,
    ProviderError,
    ProviderExhaustedError,
    RefusalError,
)


def sim_provider(seed=0, dim=32, fixtures=None):
    descriptor = ProviderDescriptor(
        kind="embedding", endpoint="simulated", model_name="sim", embedding_dim=dim, seed=seed
    )
    state = SimulatorState(seed=seed, embedding_dim=dim, fixtures=fixtures or SimulatorFixtures())
    return SimulatedProvider(descriptor, state)


# -- descriptors ---------------------------------------------------------


def test_descriptor_simulated_requires_seed():
    with pytest.raises(ConfigError):
        ProviderDescriptor(kind="text_generation", endpoint="simulated", model_name="m")


def test_descriptor_remote_requires_credentials_reference():
    with pytest.raises(ConfigError):
        ProviderDescriptor(kind="text_generation", endpoint="https://api.example", model_name="m")
    ok = ProviderDescriptor(
        kind="text_generation",
        endpoint="https://api.example",
        model_name="m",
        credentials_env="MY_KEY",
    )
    assert not ok.is_simulated


def test_descriptor_embedding_needs_dimension():
    with pytest.raises(ConfigError):
        ProviderDescriptor(kind="embedding", endpoint="simulated", model_name="m", seed=1)


def test_build_bundle_rejects_unknown_mode_and_missing_endpoints():
    with pytest.raises(ConfigError):
        build_provider_bundle({}, "offline", 0)
    with pytest.raises(ConfigError):
        build_provider_bundle({}, "remote", 0)


# -- simulator -----------------------------------------------------------


def test_simulator_text_is_deterministic_and_mentions_class():
    a = sim_provider(seed=7)
    b = sim_provider(seed=7)
    req = TextRequest("generate", "dog", "irrelevant", variation=3)
    assert a.generate_text(req) == b.generate_text(req)
    assert "dog" in a.generate_text(req)
    assert a.generate_text(req) != a.generate_text(
        TextRequest("generate", "dog", "irrelevant", variation=4)
    )


def test_simulator_is_pure_under_interleaving():
    # no hidden sequential state: call order cannot change any output
    a = sim_provider(seed=9)
    b = sim_provider(seed=9)
    req1 = TextRequest("generate", "cat", "x", 0)
    req2 = TextRequest("generate", "cat", "x", 1)
    first = a.generate_text(req1)
    for _ in range(5):
        b.generate_text(req2)
        b.embed_text("padding call")
    assert b.generate_text(req1) == first


def test_simulator_judge_scores_parse_and_vary():
    provider = sim_provider(seed=1)
    scores = set()
    for i in range(20):
        resp = provider.generate_text(TextRequest("judge", "cat", "x", 0, candidate=f"prompt {i}"))
        value = float(resp.strip().splitlines()[-1])
        assert 0.90 <= value <= 1.0
        scores.add(value)
    assert len(scores) > 10


def test_simulator_fixture_overrides():
    fixtures = SimulatorFixtures(
        generation={("cat", 0): "a fixed cat prompt"},
        judge_scores={"a fixed cat prompt": 0.42},
        judge_responses={"critique me": "Nope.\nno score here"},
        text_embeddings={"dog": np.array([1.0] * 32)},
    )
    provider = sim_provider(fixtures=fixtures)
    assert provider.generate_text(TextRequest("generate", "cat", "x", 0)) == "a fixed cat prompt"
    judged = provider.generate_text(
        TextRequest("judge", "cat", "x", 0, candidate="a fixed cat prompt")
    )
    assert judged.endswith("0.4200")
    assert provider.generate_text(TextRequest("judge", "cat", "x", 0, candidate="critique me")) == (
        "Nope.\nno score here"
    )
    assert np.array_equal(provider.embed_text("dog"), np.ones(32))


def test_simulator_image_bytes_are_seeded_png():
    provider = sim_provider(seed=3)
    png1, seed1 = provider.generate_image("a cat on a mat")
    png2, seed2 = provider.generate_image("a cat on a mat")
    assert png1 == png2 and seed1 == seed2
    assert png1[:8] == b"\x89PNG\r\n\x1a\n"
    other, _ = provider.generate_image("a cat on a mat", variation=1)
    assert other != png1


def test_simulator_refusal_and_empty_fixtures():
    fixtures = SimulatorFixtures(
        refuse_image_prompts={"forbidden"}, empty_image_prompts={"hollow"}
    )
    provider = sim_provider(fixtures=fixtures)
    with pytest.raises(RefusalError):
        provider.generate_image("forbidden")
    data, _ = provider.generate_image("hollow")
    assert data == b""


def test_simulator_embeddings_are_not_prenormalized():
    provider = sim_provider(seed=5)
    norms = [np.linalg.norm(provider.embed_text(f"some text {i} with words")) for i in range(10)]
    assert any(abs(n - 1.0) > 0.01 for n in norms)


def test_simulator_text_embedding_is_token_compositional():
    provider = sim_provider(seed=5, dim=128)
    a = provider.embed_text("a photo of a dog in a park")
    b = provider.embed_text("a photo of a dog in a garden")
    c = provider.embed_text("quarterly revenue projections spreadsheet")
    def cos(x, y):
        return float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))
    assert cos(a, b) > cos(a, c) + 0.2


def test_simulator_distinct_images_get_distinct_vectors():
    provider = sim_provider(seed=6)
    seen = set()
    for i in range(200):
        png, _ = provider.generate_image(f"prompt {i}")
        seen.add(provider.embed_image(png).tobytes())
    assert len(seen) == 200


def test_simulator_embed_errors():
    provider = sim_provider()
    with pytest.raises(ProviderError):
        provider.embed_text("")
    with pytest.raises(ProviderError):
        provider.embed_image(b"")
    with pytest.raises(ProviderError):
        provider.embed_patches(b"not a png", 64, 16)
    with pytest.raises(GridError):
        png, _ = provider.generate_image("x")
        provider.embed_patches(png, 64, 7)


def test_simulator_patch_grid_shape_and_determinism():
    provider = sim_provider(seed=8, dim=16)
    png, _ = provider.generate_image("cat")
    F1 = provider.embed_patches(png, 96, 16)
    F2 = provider.embed_patches(png, 96, 16)
    assert F1.shape == (36, 16)
    assert np.array_equal(F1, F2)
    # identical patches embed identically: a flat image has one unique row
    from PIL import Image
    import io
    buf = io.BytesIO()
    Image.new("RGB", (64, 64), (10, 20, 30)).save(buf, format="PNG")
    F = provider.embed_patches(buf.getvalue(), 64, 16)
    assert len({row.tobytes() for row in F}) == 1


# -- remote --------------------------------------------------------------


def remote_descriptor(kind="embedding", **overrides):
    doc = dict(
        kind=kind,
        endpoint="https://models.example/v1",
        model_name="probe",
        credentials_env="TEST_MODEL_KEY",
        max_attempts=3,
        backoff_base_s=0.1,
    )
    if kind == "embedding":
        doc["embedding_dim"] = 4
    doc.update(overrides)
    return ProviderDescriptor(**doc)


class FakeTransport:
    """Scripted (status, result) responses; records every call."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def __call__(self, url, body, headers, timeout):
        self.calls.append({"url": url, "body": json.loads(body), "headers": headers})
        status, result = self.script.pop(0)
        if isinstance(result, Exception):
            raise result
        return status, json.dumps({"result": result}).encode()


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("TEST_MODEL_KEY", "sk-test-123")


def test_remote_retries_429_then_succeeds(api_key):
    transport = FakeTransport([(429, {}), (200, {"vector": [1.0, 0.0, 0.0, 0.0]})])
    sleeps = []
    provider = RemoteProvider(remote_descriptor(), transport, sleeper=sleeps.append)
    vec = provider.embed_text("hello")
    assert np.array_equal(vec, [1.0, 0.0, 0.0, 0.0])
    assert len(transport.calls) == 2
    assert sleeps == [0.1]
    assert transport.calls[0]["headers"]["Authorization"] == "Bearer sk-test-123"


def test_remote_backoff_is_monotone_and_bounded(api_key):
    transport = FakeTransport([(500, {})] * 3)
    sleeps = []
    provider = RemoteProvider(remote_descriptor(), transport, sleeper=sleeps.append)
    with pytest.raises(ProviderExhaustedError):
        provider.embed_text("hello")
    assert len(transport.calls) == 3  # never exceeds max_attempts
    assert sleeps == sorted(sleeps)
    assert len(sleeps) == 2  # no sleep after the final attempt


def test_remote_transport_errors_are_retryable(api_key):
    transport = FakeTransport(
        [(0, ConnectionError("reset")), (200, {"vector": [0.0, 1.0, 0.0, 0.0]})]
    )
    provider = RemoteProvider(remote_descriptor(), transport, sleeper=lambda s: None)
    assert provider.embed_text("x")[1] == 1.0


def test_remote_fatal_4xx_does_not_retry(api_key):
    transport = FakeTransport([(404, {})])
    provider = RemoteProvider(remote_descriptor(), transport, sleeper=lambda s: None)
    with pytest.raises(ProviderError) as err:
        provider.embed_text("x")
    assert not isinstance(err.value, ProviderExhaustedError)
    assert len(transport.calls) == 1


def test_remote_requires_credentials_in_environment(monkeypatch):
    monkeypatch.delenv("TEST_MODEL_KEY", raising=False)
    provider = RemoteProvider(remote_descriptor(), FakeTransport([]))
    with pytest.raises(ProviderError, match="TEST_MODEL_KEY"):
        provider.embed_text("x")


def test_remote_text_and_image_results(api_key):
    transport = FakeTransport(
        [
            (200, {"text": "a generated prompt"}),
            (200, {"png_base64": base64.b64encode(b"fakepng").decode(), "seed": 99}),
            (200, {"refusal": "content policy"}),
        ]
    )
    text_provider = RemoteProvider(remote_descriptor("text_generation"), transport)
    image_provider = RemoteProvider(remote_descriptor("image_generation"), transport)
    assert text_provider.generate_text(TextRequest("generate", "cat", "c", 0)) == "a generated prompt"
    data, seed = image_provider.generate_image("a cat")
    assert (data, seed) == (b"fakepng", 99)
    with pytest.raises(RefusalError):
        image_provider.generate_image("something refused")


def test_remote_validates_embedding_dimension(api_key):
    transport = FakeTransport([(200, {"vector": [1.0, 2.0]})])
    provider = RemoteProvider(remote_descriptor(embedding_dim=4), transport)
    with pytest.raises(ProviderError, match="dimension"):
        provider.embed_text("x")


def test_remote_validates_patch_matrix_shape(api_key):
    transport = FakeTransport([(200, {"matrix": [[0.0] * 4] * 3})])
    provider = RemoteProvider(remote_descriptor(), transport)
    with pytest.raises(ProviderError, match="shape"):
        provider.embed_patches(b"png", 64, 16)  # wants 16 rows, gets 3


def test_remote_malformed_response_body(api_key):
    class RawTransport:
        def __call__(self, url, body, headers, timeout):
            return 200, b"this is not json"

    provider = RemoteProvider(remote_descriptor(), RawTransport())
    with pytest.raises(ProviderError, match="malformed"):
        provider.embed_text("x")


def test_response_cache_avoids_second_call(api_key, tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    script = [(200, {"vector": [1.0, 0.0, 0.0, 0.0]})]
    transport = FakeTransport(script)
    provider = RemoteProvider(remote_descriptor(), transport, cache=cache)
    first = provider.embed_text("hello")
    # a fresh provider over the same cache directory must not hit the network
    strict = RemoteProvider(remote_descriptor(), FakeTransport([]), cache=cache)
    second = strict.embed_text("hello")
    assert np.array_equal(first, second)
    assert len(transport.calls) == 1
    files = list((tmp_path / "cache").rglob("*.bin"))
    assert len(files) == 1 and files[0].parent.name == "probe"


def test_response_cache_key_distinguishes_requests(api_key, tmp_path):
    cache = ResponseCache(tmp_path)
    a = ResponseCache.key_for({"kind": "embedding", "payload": {"text": "a"}})
    b = ResponseCache.key_for({"kind": "embedding", "payload": {"text": "b"}})
    assert a != b
    cache.put("p", a, b"alpha")
    assert cache.get("p", a) == b"alpha"
    assert cache.get("p", b) is None
