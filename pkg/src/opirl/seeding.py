"""Deterministic per-component seed derivation.

Every stochastic component (env, policy noise, buffers, eval, ...) gets its
own numpy Generator derived from the global seed and the component name, so
adding a new component never perturbs the random streams of existing ones.
"""

import hashlib

import numpy as np


def component_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def component_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(component_seed(seed, name))
