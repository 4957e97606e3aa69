"""Anatomy of the remote provider: retries, backoff, caching, credentials.

No network access needed: a scripted in-memory transport stands in for the
HTTP layer, which is exactly how the unit tests exercise the client. The
same seams (transport, sleeper, cache) are what you would use to wire in a
real endpoint.

    python3 demos/05_remote_provider.py
"""

import base64
import json
import os
import tempfile

from synthforge.backends.base import ProviderDescriptor
from synthforge.backends.remote import RemoteProvider, ResponseCache
from synthforge.errors import ProviderError, ProviderExhaustedError


class ScriptedTransport:
    """Plays back a list of (status, result) responses and logs each request."""

    def __init__(self, script):
        self.script = list(script)
        self.log = []

    def __call__(self, url, body, headers, timeout):
        request = json.loads(body)
        self.log.append(request["kind"])
        status, result = self.script.pop(0)
        print(f"    -> POST {url} [{request['kind']}] answered {status}")
        return status, json.dumps({"result": result}).encode()


def descriptor(**overrides):
    doc = dict(
        kind="image_generation",
        endpoint="https://images.example/v1",
        model_name="demo-model",
        credentials_env="DEMO_API_KEY",
        max_attempts=3,
        backoff_base_s=0.25,
    )
    doc.update(overrides)
    return ProviderDescriptor(**doc)


def main():
    png = base64.b64encode(b"\x89PNG...demo bytes...").decode()

    print("=== 1. credentials come from the environment, by name ===")
    os.environ.pop("DEMO_API_KEY", None)
    provider = RemoteProvider(descriptor(), ScriptedTransport([]))
    try:
        provider.generate_image("a cat")
    except ProviderError as exc:
        print(f"    without the variable set: {exc}")
    os.environ["DEMO_API_KEY"] = "demo-secret"
    print("    (the descriptor stores only the NAME 'DEMO_API_KEY', never the value)")

    print()
    print("=== 2. retryable statuses back off and recover ===")
    sleeps = []
    transport = ScriptedTransport([(429, {}), (503, {}), (200, {"png_base64": png, "seed": 5})])
    provider = RemoteProvider(descriptor(), transport, sleeper=sleeps.append)
    data, seed = provider.generate_image("a cat in the rain")
    print(f"    got {len(data)} bytes (seed {seed}) after sleeps {sleeps}")

    print()
    print("=== 3. permanent failure exhausts the attempt budget ===")
    transport = ScriptedTransport([(500, {})] * 3)
    provider = RemoteProvider(descriptor(), transport, sleeper=lambda s: None)
    try:
        provider.generate_image("a cat")
    except ProviderExhaustedError as exc:
        print(f"    after {len(transport.log)} attempts: {exc}")
        print("    (the CLI maps this to exit code 3)")

    print()
    print("=== 4. responses are cached by request digest ===")
    with tempfile.TemporaryDirectory() as tmp:
        cache = ResponseCache(tmp)
        transport = ScriptedTransport([(200, {"png_base64": png, "seed": 1})])
        provider = RemoteProvider(descriptor(), transport, cache=cache)
        provider.generate_image("a very specific cat")
        again = RemoteProvider(descriptor(), ScriptedTransport([]), cache=cache)
        data, _ = again.generate_image("a very specific cat")  # no transport call
        print(f"    second provider served {len(data)} bytes from {tmp} without any request")


if __name__ == "__main__":
    main()
