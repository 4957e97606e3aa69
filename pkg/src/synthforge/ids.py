"""ULID-format identifiers drawn from a seeded stream.

Identifiers are 26-character Crockford base32 strings (128 bits) that sort
lexicographically in creation order. The high 48 bits are a monotone
counter and the low 80 bits come from a seeded generator, so a rerun with
the same seed assigns the same ids. Ids never depend on record content.
"""

from __future__ import annotations

import numpy as np

_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def _encode_base32(value: int, length: int) -> str:
    chars = []
    for _ in range(length):
        chars.append(_CROCKFORD[value & 0x1F])
        value >>= 5
    return "".join(reversed(chars))


class IdFactory:
    """Deterministic id source for one kind of record within a run.

    ``kind`` salts the stream so prompt and image ids never collide even
    under the same run seed.
    """

    def __init__(self, seed: int, kind: str):
        material = f"{seed}:{kind}".encode("utf-8")
        self._rng = np.random.default_rng(np.frombuffer(material.ljust(16, b"\0"), dtype=np.uint8))
        self._counter = 0

    def next(self) -> str:
        if self._counter >= 1 << 48:
            raise OverflowError("id counter exhausted")
        high = self._counter
        self._counter += 1
        low = int(self._rng.integers(0, 1 << 40, dtype=np.int64)) << 40
        low |= int(self._rng.integers(0, 1 << 40, dtype=np.int64))
        value = (high << 80) | low
        return _encode_base32(value, 26)
