"""Deterministic sub-seed derivation.

One master seed governs all randomness in a run (parameter init, batch
composition, pair shuffling, penalty interpolation). Each consumer derives
its own seed by stable hashing of the component name, so adding or removing
one consumer never perturbs the streams of the others.
"""

import hashlib


def derive_seed(master: int, *scope) -> int:
    """Return a stable 63-bit seed for a named component.

    ``scope`` parts are joined into a path, e.g. ``derive_seed(7, "gp", 120, 3)``.
    """
    text = f"{int(master)}/" + "/".join(str(part) for part in scope)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
