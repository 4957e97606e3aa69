"""Seeded offline stand-ins for the text, image, and embedding models.

Every output is a pure function of (seed, fixtures, request), so reruns
and stage resumes reproduce byte-identical results without any network.

Text embeddings are compositional: a weighted sum of per-token hash
vectors plus a small whole-text component. Texts sharing words land near
each other, which gives the diversity filter and the class-name text gate
realistic behaviour instead of pure noise. Class names embed with the
same encoder, so a prompt that actually mentions its subject scores
clearly above an unrelated class.

Fixture tables override individual outputs for worked-example tests.
"""

from __future__ import annotations

import hashlib
import io
import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import GridError, ProviderError, RefusalError
from .base import ProviderDescriptor, TextRequest

_STOPWORDS = frozenset(
    "a an the of on in at by for to with and or as is are was were be its it this that".split()
)
_TOKEN_RE = re.compile(r"[a-z0-9]+")

_ADJECTIVES = (
    "candid", "sunlit", "weathered", "close-up", "wide-angle",
    "overcast", "crisp", "grainy", "vivid", "quiet",
)
_ACTIVITIES = (
    "resting", "mid-stride", "half-hidden", "caught mid-turn", "facing away",
    "leaning sideways", "partly in shadow", "centered in frame", "off to one side", "seen from below",
)
_SETTINGS = (
    "in a cluttered garage", "on a rain-soaked street", "beside a garden fence",
    "in a busy market", "on a windswept beach", "under falling snow",
    "in a tiled kitchen", "near a graffiti wall", "at the edge of a forest",
    "on a rooftop at dusk",
)
_STATES = (
    "alert under warm evening light", "worn by harsh noon sun", "gleaming in soft window light",
    "dusty under fluorescent glare", "relaxed in golden-hour haze", "weather-beaten in morning fog",
    "brand new under neon spill", "slightly blurred in lantern glow", "sharply lit against cloud light",
    "mud-spattered in low tungsten light",
)


def _digest_rng(*parts: str) -> np.random.Generator:
    material = "\x1f".join(parts).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "big"))


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class SimulatorFixtures:
    """Optional canned outputs keyed by request content.

    - ``generation``: (class_name, variation) -> generated text
    - ``judge_scores``: candidate text -> numeric score (emitted as the judge would)
    - ``judge_responses``: candidate text -> raw judge response (for parser tests)
    - ``text_embeddings``: exact text -> vector
    - ``image_embeddings``: sha256 hexdigest of image bytes -> vector
    - ``refuse_image_prompts`` / ``empty_image_prompts``: failure injection
    """

    generation: dict[tuple[str, int], str] = field(default_factory=dict)
    judge_scores: dict[str, float] = field(default_factory=dict)
    judge_responses: dict[str, str] = field(default_factory=dict)
    text_embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    image_embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    refuse_image_prompts: set[str] = field(default_factory=set)
    empty_image_prompts: set[str] = field(default_factory=set)


@dataclass
class SimulatorState:
    seed: int
    embedding_dim: int
    fixtures: SimulatorFixtures = field(default_factory=SimulatorFixtures)


class SimulatedProvider:
    """Deterministic provider; shares one SimulatorState across the three kinds."""

    def __init__(self, descriptor: ProviderDescriptor, state: SimulatorState | None = None):
        if not descriptor.is_simulated:
            raise ValueError("SimulatedProvider requires a simulated descriptor")
        self.descriptor = descriptor
        self.state = state or SimulatorState(seed=descriptor.seed, embedding_dim=descriptor.embedding_dim or 128)
        self.calls: dict[str, int] = {}

    def _count(self, method: str) -> None:
        self.calls[method] = self.calls.get(method, 0) + 1

    @property
    def _seed(self) -> str:
        return str(self.state.seed)

    # -- text generation ------------------------------------------------

    def generate_text(self, request: TextRequest) -> str:
        self._count("generate_text")
        if request.purpose == "generate":
            return self._generate_prompt_text(request)
        if request.purpose == "judge":
            return self._judge_response(request)
        raise ProviderError(f"unknown text request purpose: {request.purpose!r}")

    def _generate_prompt_text(self, request: TextRequest) -> str:
        fixtures = self.state.fixtures
        key = (request.class_name, request.variation)
        if key in fixtures.generation:
            return fixtures.generation[key]
        rng = _digest_rng(self._seed, "gen", request.class_name, str(request.variation))
        adj = _ADJECTIVES[int(rng.integers(len(_ADJECTIVES)))]
        act = _ACTIVITIES[int(rng.integers(len(_ACTIVITIES)))]
        setting = _SETTINGS[int(rng.integers(len(_SETTINGS)))]
        state = _STATES[int(rng.integers(len(_STATES)))]
        cls = request.class_name
        article = "An" if adj[0] in "aeiou" else "A"
        return f"{article} {adj} photo of a {cls} {act} {setting}; the {cls} appears {state}."

    def _judge_response(self, request: TextRequest) -> str:
        fixtures = self.state.fixtures
        candidate = request.candidate or ""
        if candidate in fixtures.judge_responses:
            return fixtures.judge_responses[candidate]
        if candidate in fixtures.judge_scores:
            score = fixtures.judge_scores[candidate]
        else:
            u = float(_digest_rng(self._seed, "judge", candidate).random())
            score = round(0.90 + 0.10 * u, 4)
        return f"Subject reads clearly and the scene is plausible.\n{score:.4f}"

    # -- image generation -----------------------------------------------

    def generate_image(self, prompt: str, variation: int = 0) -> tuple[bytes, int]:
        """Return (png_bytes, provider_seed); pixels are a seeded function of the prompt."""
        self._count("generate_image")
        fixtures = self.state.fixtures
        if prompt in fixtures.refuse_image_prompts:
            raise RefusalError(f"simulated refusal for prompt: {prompt[:60]!r}")
        if prompt in fixtures.empty_image_prompts:
            return b"", 0
        from PIL import Image

        rng = _digest_rng(self._seed, "image", prompt, str(variation))
        provider_seed = int(rng.integers(0, 2**31 - 1))
        side = 64
        base = rng.integers(0, 256, size=3)
        grad = np.linspace(0, 1, side)
        canvas = np.zeros((side, side, 3), dtype=np.float64)
        canvas += base
        canvas += 80.0 * grad[:, None, None] * rng.random(3)
        canvas += 80.0 * grad[None, :, None] * rng.random(3)
        for _ in range(4):  # a few flat rectangles so patches differ
            x0, y0 = rng.integers(0, side - 8, size=2)
            w, h = rng.integers(8, 24, size=2)
            canvas[y0 : y0 + h, x0 : x0 + w] = rng.integers(0, 256, size=3)
        pixels = np.clip(canvas, 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue(), provider_seed

    # -- embeddings -----------------------------------------------------

    def _token_vector(self, token: str) -> np.ndarray:
        rng = _digest_rng(self._seed, "tok", token)
        v = rng.standard_normal(self.state.embedding_dim)
        return v / np.linalg.norm(v)

    def embed_text(self, text: str) -> np.ndarray:
        """Weighted bag of token hash vectors; NOT normalized (callers normalize)."""
        self._count("embed_text")
        if not text:
            raise ProviderError("cannot embed an empty string")
        fixtures = self.state.fixtures
        if text in fixtures.text_embeddings:
            return np.asarray(fixtures.text_embeddings[text], dtype=np.float64).copy()
        tokens = _tokens(text)
        content = [t for t in tokens if t not in _STOPWORDS] or tokens
        v = np.zeros(self.state.embedding_dim)
        for token in content:
            v += self._token_vector(token)
        rng = _digest_rng(self._seed, "full", text)
        whole = rng.standard_normal(self.state.embedding_dim)
        v += 0.25 * whole / np.linalg.norm(whole)
        return v

    def embed_image(self, image_bytes: bytes) -> np.ndarray:
        self._count("embed_image")
        if not image_bytes:
            raise ProviderError("cannot embed empty image bytes")
        digest = hashlib.sha256(image_bytes).hexdigest()
        fixtures = self.state.fixtures
        if digest in fixtures.image_embeddings:
            return np.asarray(fixtures.image_embeddings[digest], dtype=np.float64).copy()
        return _digest_rng(self._seed, "imgvec", digest).standard_normal(self.state.embedding_dim)

    def embed_patches(self, image_bytes: bytes, input_side: int, patch_side: int) -> np.ndarray:
        """Resize, split row-major into (input_side/patch_side)^2 patches, hash each."""
        self._count("embed_patches")
        if input_side % patch_side != 0:
            raise GridError(f"patch side {patch_side} does not divide input side {input_side}")
        from PIL import Image, UnidentifiedImageError

        try:
            img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise ProviderError(f"undecodable image: {exc}") from exc
        img = img.resize((input_side, input_side), Image.BILINEAR)
        arr = np.asarray(img)
        n = input_side // patch_side
        patches = (
            arr.reshape(n, patch_side, n, patch_side, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(n * n, patch_side, patch_side, 3)
        )
        dim = self.state.embedding_dim
        out = np.empty((n * n, dim))
        for i, patch in enumerate(patches):
            digest = hashlib.sha256(patch.tobytes()).hexdigest()
            out[i] = _digest_rng(self._seed, "patch", digest).standard_normal(dim)
        return out
