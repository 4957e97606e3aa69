"""Provider descriptors and the request shapes shared by all backends.

Every model call in the pipeline goes through a provider object exposing
``generate_text``, ``generate_image``, ``embed_text``, ``embed_image``,
and ``embed_patches``. Two implementations exist: a seeded offline
simulator and a JSON-over-HTTP remote client.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from ..errors import ConfigError

PROVIDER_KINDS = ("text_generation", "image_generation", "embedding")


@dataclass(frozen=True)
class ProviderDescriptor:
    """Where a model lives and how to talk to it.

    ``endpoint`` is either a URL or the literal string "simulated".
    Simulated providers need a seed; remote providers need the NAME of an
    environment variable holding credentials (never the secret itself).
    """

    kind: str
    endpoint: str
    model_name: str
    name: str | None = None
    embedding_dim: int | None = None
    seed: int | None = None
    credentials_env: str | None = None
    max_attempts: int = 3
    backoff_base_s: float = 0.5
    timeout_s: float = 30.0
    max_concurrency: int = 4
    requests_per_minute: int | None = None

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ConfigError(f"unknown provider kind: {self.kind!r}")
        if self.kind == "embedding" and (self.embedding_dim is None or self.embedding_dim < 1):
            raise ConfigError("embedding providers must declare a positive embedding_dim")
        if self.is_simulated:
            if self.seed is None:
                raise ConfigError("simulated providers require a seed")
        elif not self.credentials_env:
            raise ConfigError("remote providers require a credentials_env reference")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")

    @property
    def is_simulated(self) -> bool:
        return self.endpoint == "simulated"

    @property
    def cache_name(self) -> str:
        return self.name or self.model_name


@dataclass(frozen=True)
class TextRequest:
    """One LLM call: either prompt generation or a judge/refine scoring call."""

    purpose: str  # "generate" | "judge"
    class_name: str
    content: str
    variation: int = 0
    candidate: str | None = None

    def payload(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "purpose": self.purpose,
            "class_name": self.class_name,
            "content": self.content,
            "variation": self.variation,
        }
        if self.candidate is not None:
            doc["candidate"] = self.candidate
        return doc


@dataclass
class ProviderBundle:
    """The three providers one run talks to."""

    text: Any
    image: Any
    embedding: Any

    @property
    def embedding_dim(self) -> int:
        return self.embedding.descriptor.embedding_dim


def build_provider_bundle(
    providers_config: dict[str, Any],
    mode: str,
    seed: int,
    cache_dir=None,
) -> ProviderBundle:
    """Construct the run's providers from the config's ``providers`` section.

    ``mode`` ("simulated" or "remote") overrides per-provider endpoints so a
    whole run can be flipped offline with one flag.
    """
    from .remote import RemoteProvider, ResponseCache
    from .simulator import SimulatedProvider, SimulatorFixtures, SimulatorState

    if mode not in ("simulated", "remote"):
        raise ConfigError(f"provider mode must be 'simulated' or 'remote', got {mode!r}")
    dim = int(providers_config.get("embedding_dim", 128))
    built = {}
    state = SimulatorState(seed=seed, embedding_dim=dim, fixtures=SimulatorFixtures())
    for kind in PROVIDER_KINDS:
        section = dict(providers_config.get(kind, {}))
        section.setdefault("model_name", f"sim-{kind}" if mode == "simulated" else kind)
        if mode == "simulated":
            section["endpoint"] = "simulated"
            section.setdefault("seed", seed)
        else:
            if "endpoint" not in section:
                raise ConfigError(f"remote mode requires providers.{kind}.endpoint")
            section.setdefault("credentials_env", "SYNTHFORGE_API_KEY")
        if kind == "embedding":
            section.setdefault("embedding_dim", dim)
        descriptor = ProviderDescriptor(kind=kind, **section)
        if descriptor.is_simulated:
            built[kind] = SimulatedProvider(descriptor, state)
        else:
            cache = ResponseCache(cache_dir) if cache_dir else None
            built[kind] = RemoteProvider(descriptor, cache=cache)
    return ProviderBundle(
        text=built["text_generation"],
        image=built["image_generation"],
        embedding=built["embedding"],
    )
