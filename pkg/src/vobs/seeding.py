"""Named seed derivation.

Every random stream in the workbench is derived from one master seed and a
path of names (e.g. ``derive_seed(7, "simulate", "slalom@0.95", 3)``), so no
component touches global RNG state and any stage can be reproduced in
isolation.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, *names) -> int:
    """Hash (master_seed, names...) into a 64-bit child seed."""
    key = "/".join([str(int(master_seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derived_rng(master_seed: int, *names) -> np.random.Generator:
    """Generator seeded by `derive_seed` for the same arguments."""
    return np.random.default_rng(derive_seed(master_seed, *names))
