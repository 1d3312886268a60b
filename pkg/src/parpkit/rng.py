"""Named, splittable random streams.

Every stochastic site draws from ``stream(seed, label, ...)``.  The stream is
a counter-based Philox generator keyed by a SHA-256 digest of the run seed
and the site labels, so adding a new site never perturbs an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(seed: int, labels: tuple) -> int:
    text = "/".join([str(int(seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stream(seed: int, *labels) -> np.random.Generator:
    """Return an independent generator for ``(seed, *labels)``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, labels)))
