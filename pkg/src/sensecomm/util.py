"""Shared small helpers: unit conversions, seeded RNG derivation, atomic writes."""

from __future__ import annotations

import hashlib
import math
import os
import tempfile

import numpy as np

C_LIGHT = 299_792_458.0  # m/s
CENTER_FREQUENCY = 193.45e12  # Hz, midpoint of the two-carrier grid
REF_BANDWIDTH = 12.5e9  # Hz, 0.1 nm OSNR reference bandwidth

# Fixed FFT worker count keeps outputs bit-identical across hosts.
FFT_WORKERS = 2


def dbm_to_watt(p_dbm: float) -> float:
    return 1e-3 * 10.0 ** (p_dbm / 10.0)


def watt_to_dbm(p_watt: float) -> float:
    return 10.0 * math.log10(p_watt / 1e-3)


def db_to_lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def lin_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFFFFFFFFFF
    if isinstance(tag, float):
        if math.isinf(tag):
            return 0x7FFFFFFFFFFFFFFF
        return int(round(tag * 1e6)) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(tag).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def spawn_rng(master_seed: int, *tags) -> np.random.Generator:
    """Derive an independent, reproducible RNG from a master seed and context tags.

    The same (master_seed, tags) always yields the same stream, regardless of
    call order, which keeps parallel sweeps deterministic.
    """
    entropy = [int(master_seed)] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write a file so a crash never leaves a partial artifact at `path`."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode())
