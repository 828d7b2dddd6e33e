"""
Reproducible random streams.

All randomness is derived from a single 64-bit root seed. Each consumer
(an individual in a panel, a block of Monte-Carlo draws, a replicate in an
experiment) gets its own Philox counter-based stream keyed by
(root seed, purpose tag, index), so results never depend on the order in
which work is scheduled across threads.
"""
import numpy as np

# Purpose tags keep streams for different consumers disjoint.
STREAM_INDIVIDUAL = 0
STREAM_MONTE_CARLO = 1
STREAM_REPLICATE = 2
STREAM_ORACLE = 3

_MASK64 = (1 << 64) - 1


def make_generator(seed: int, *keys: int) -> np.random.Generator:
    """
    Build a Philox-backed generator for the stream identified by ``keys``.

    Args:
        seed: 64-bit root seed
        keys: Non-negative integers naming the stream

    Returns:
        Independent numpy Generator
    """
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def individual_generator(seed: int, index: int) -> np.random.Generator:
    """Stream for individual ``index`` of a panel simulated from ``seed``."""
    return make_generator(seed, STREAM_INDIVIDUAL, index)


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Stream for Monte-Carlo draw block ``block``."""
    return make_generator(seed, STREAM_MONTE_CARLO, block)


def derive_seed(seed: int, *keys: int) -> int:
    """
    Derive a child 64-bit seed, e.g. one per replicate of an experiment.

    Args:
        seed: Root seed
        keys: Integers naming the child

    Returns:
        A 64-bit integer seed
    """
    seq = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    words = seq.generate_state(2, dtype=np.uint32)
    return (int(words[0]) << 32) | int(words[1])
