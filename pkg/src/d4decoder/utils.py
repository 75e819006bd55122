"""Shared utilities: seed derivation, random generators and file hashing."""

import hashlib
import zlib
from pathlib import Path
import numpy as np


def derive_seed(root: int, tag: str, index: int = 0) -> int:
    """Derive the seed of one random stream from the root seed of a run.

    Streams are identified by a purpose tag (e.g. "simulate", "init",
    "samples") and an index (lag, iteration, fold, trial).

    Returns:
        A 32-bit seed from numpy's SeedSequence over [root, crc32(tag), index].
    """
    entropy = [int(root), zlib.crc32(tag.encode("utf-8")), int(index)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def make_rng(seed: int) -> np.random.Generator:
    """Random generator with the PCG64 bit generator."""
    return np.random.Generator(np.random.PCG64(seed))


def file_sha256(path: Path) -> str:
    """Return the sha256 hex digest of a file."""
    digest = hashlib.sha256()
    with path.open("rb") as file:
        for block in iter(lambda: file.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()
