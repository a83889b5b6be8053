"""Deterministic seed lineage.

A run is driven by one master seed. Every random decision (partitioning,
weight init, per-round selection, per-client shuffles, dropout masks)
draws from a child stream derived from the master seed plus a key of
string tags and integer counters, e.g. ``("client", t, k, epoch)``.
Equal (master, key) always yields the same stream, and distinct keys give
independent streams, so runs replay bit-exactly regardless of execution
order.
"""

import zlib

import numpy as np


def _key_words(parts):
    words = []
    for part in parts:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (int, np.integer)):
            words.append(int(part) & 0xFFFFFFFF)
        else:
            raise TypeError(f"seed key parts must be str or int, got {type(part)!r}")
    return words


def seed_seq(master, *key):
    """SeedSequence for the stream identified by (master, key)."""
    return np.random.SeedSequence([int(master)] + _key_words(key))


def rng(master, *key):
    """Generator for the stream identified by (master, key)."""
    return np.random.default_rng(seed_seq(master, *key))


def seed_int(master, *key):
    """Collapse a derived stream to a single integer seed (for sub-runs)."""
    return int(seed_seq(master, *key).generate_state(1)[0])
