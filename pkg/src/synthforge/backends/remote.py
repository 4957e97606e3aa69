"""HTTP-backed provider with retries, backoff, and a byte-level response cache.

The transport is injectable: any callable ``(url, body, headers, timeout) ->
(status_code, response_bytes)``. Tests supply fakes; production uses
``requests``. Credentials are read from the environment variable named in the
descriptor at call time and never stored on the object.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ProviderError, ProviderExhaustedError, RefusalError
from .base import ProviderDescriptor, TextRequest

Transport = Callable[[str, bytes, dict, float], tuple[int, bytes]]

_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


def _requests_transport(url: str, body: bytes, headers: dict, timeout: float) -> tuple[int, bytes]:
    import requests

    resp = requests.post(url, data=body, headers=headers, timeout=timeout)
    return resp.status_code, resp.content


class ResponseCache:
    """Content-addressed store of raw response bodies under ``cache/<provider>/``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _path(self, provider_name: str, key: str) -> Path:
        return self.root / provider_name / f"{key}.bin"

    @staticmethod
    def key_for(request_body: dict) -> str:
        canonical = json.dumps(request_body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def get(self, provider_name: str, key: str) -> bytes | None:
        path = self._path(provider_name, key)
        if not path.is_file():
            return None
        return path.read_bytes()

    def put(self, provider_name: str, key: str, body: bytes) -> None:
        path = self._path(provider_name, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(body)
        tmp.replace(path)


class RemoteProvider:
    def __init__(
        self,
        descriptor: ProviderDescriptor,
        transport: Transport | None = None,
        sleeper: Callable[[float], None] | None = None,
        cache: ResponseCache | None = None,
    ):
        if descriptor.is_simulated:
            raise ValueError("RemoteProvider requires a non-simulated descriptor")
        self.descriptor = descriptor
        self.transport = transport or _requests_transport
        self.sleeper = sleeper or time.sleep
        self.cache = cache
        self.calls: dict[str, int] = {}

    def _count(self, method: str) -> None:
        self.calls[method] = self.calls.get(method, 0) + 1

    def _headers(self) -> dict:
        env_name = self.descriptor.credentials_env
        token = os.environ.get(env_name or "")
        if not token:
            raise ProviderError(
                f"credential environment variable {env_name!r} is unset or empty"
            )
        return {"Authorization": f"Bearer {token}", "Content-Type": "application/json"}

    def _call(self, payload: dict) -> dict:
        """POST the request, retrying transient failures with exponential backoff."""
        desc = self.descriptor
        request_body = {"kind": desc.kind, "model": desc.model_name, "payload": payload}
        cache_key = ResponseCache.key_for(request_body)
        if self.cache is not None:
            hit = self.cache.get(desc.cache_name, cache_key)
            if hit is not None:
                return self._decode_body(hit)

        body = json.dumps(request_body).encode("utf-8")
        headers = self._headers()
        last_reason = "no attempts made"
        for attempt in range(1, desc.max_attempts + 1):
            try:
                status, raw = self.transport(desc.endpoint, body, headers, desc.timeout_s)
            except Exception as exc:  # transport-level failure, retryable
                last_reason = f"transport error: {exc}"
            else:
                if status == 200:
                    result = self._decode_body(raw)
                    if self.cache is not None:
                        self.cache.put(desc.cache_name, cache_key, raw)
                    return result
                if status not in _RETRYABLE_STATUS:
                    raise ProviderError(
                        f"{desc.kind} request failed with status {status}: {raw[:200]!r}"
                    )
                last_reason = f"status {status}"
            if attempt < desc.max_attempts:
                self.sleeper(desc.backoff_base_s * (2 ** (attempt - 1)))
        raise ProviderExhaustedError(
            f"{desc.kind} request failed after {desc.max_attempts} attempts ({last_reason})"
        )

    @staticmethod
    def _decode_body(raw: bytes) -> dict:
        try:
            parsed = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
        if not isinstance(parsed, dict) or "result" not in parsed:
            raise ProviderError("provider response missing 'result'")
        return parsed["result"]

    # -- the five operations, mirroring the simulator ---------------------

    def generate_text(self, request: TextRequest) -> str:
        self._count("generate_text")
        result = self._call(request.payload())
        text = result.get("text")
        if not isinstance(text, str) or not text:
            raise ProviderError("text generation result missing 'text'")
        return text

    def generate_image(self, prompt: str, variation: int = 0) -> tuple[bytes, int]:
        self._count("generate_image")
        result = self._call({"purpose": "image", "prompt": prompt, "variation": variation})
        if "refusal" in result:
            raise RefusalError(str(result["refusal"]))
        encoded = result.get("png_base64")
        if not isinstance(encoded, str):
            raise ProviderError("image result missing 'png_base64'")
        try:
            png = base64.b64decode(encoded, validate=True)
        except Exception as exc:
            raise ProviderError(f"invalid base64 image payload: {exc}") from exc
        return png, int(result.get("seed", 0))

    def _expect_dim(self, vector: np.ndarray) -> np.ndarray:
        want = self.descriptor.embedding_dim
        if want is not None and vector.shape[-1] != want:
            raise ProviderError(
                f"embedding dimension {vector.shape[-1]} != declared {want}"
            )
        return vector

    def embed_text(self, text: str) -> np.ndarray:
        self._count("embed_text")
        if not text:
            raise ProviderError("cannot embed an empty string")
        result = self._call({"purpose": "embed_text", "text": text})
        vec = result.get("vector")
        if not isinstance(vec, list):
            raise ProviderError("embedding result missing 'vector'")
        return self._expect_dim(np.asarray(vec, dtype=np.float64))

    def embed_image(self, image_bytes: bytes) -> np.ndarray:
        self._count("embed_image")
        if not image_bytes:
            raise ProviderError("cannot embed empty image bytes")
        payload = {
            "purpose": "embed_image",
            "png_base64": base64.b64encode(image_bytes).decode("ascii"),
        }
        result = self._call(payload)
        vec = result.get("vector")
        if not isinstance(vec, list):
            raise ProviderError("embedding result missing 'vector'")
        return self._expect_dim(np.asarray(vec, dtype=np.float64))

    def embed_patches(self, image_bytes: bytes, input_side: int, patch_side: int) -> np.ndarray:
        self._count("embed_patches")
        payload = {
            "purpose": "embed_patches",
            "png_base64": base64.b64encode(image_bytes).decode("ascii"),
            "input_side": input_side,
            "patch_side": patch_side,
        }
        result = self._call(payload)
        matrix = result.get("matrix")
        if not isinstance(matrix, list) or not matrix:
            raise ProviderError("patch embedding result missing 'matrix'")
        arr = np.asarray(matrix, dtype=np.float64)
        expected_rows = (input_side // patch_side) ** 2
        if arr.ndim != 2 or arr.shape[0] != expected_rows:
            raise ProviderError(
                f"patch embedding matrix has shape {arr.shape}, expected {expected_rows} rows"
            )
        return self._expect_dim(arr)
