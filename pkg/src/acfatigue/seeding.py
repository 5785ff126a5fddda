"""Seed derivation.

Every random stream in the pipeline comes from one integer root seed.
Child seeds are obtained with :func:`derive_seed`, which feeds the root and
a tuple of labels into :class:`numpy.random.SeedSequence` (labels that are
strings are first reduced to 32-bit integers through SHA-256).  The
generator used everywhere is numpy's PCG64 via :func:`make_rng`.

Derivations used by the pipeline::

    fold assignment      seed
    network init, fold k derive_seed(seed, "init", k)
    batch shuffling      derive_seed(seed, "shuffle", k)
    grid configuration   derive_seed(seed, "config", <config hash>)
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("seed labels must be non-negative")
        return int(label)
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seed(root: int, *labels) -> int:
    """Return a 63-bit child seed of ``root`` identified by ``labels``."""
    ss = np.random.SeedSequence(
        entropy=int(root) & (2**64 - 1),
        spawn_key=tuple(_label_to_int(lab) for lab in labels),
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & (2**64 - 1)))
