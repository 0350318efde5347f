import numpy as np

# stream tags keep restart, bootstrap and simulation draws independent for the same master seed
RESTART_STREAM = 0
BOOTSTRAP_STREAM = 1
PERMUTATION_TEST_STREAM = 2
SYNTHETIC_STREAM = 3


def derive_seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    """Deterministically derive a child seed sequence from a master seed and a path of integer keys."""
    if seed < 0:
        raise ValueError(f"Seeds must be unsigned integers, got {seed}")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(key) for key in keys))


def get_rng(seed: int, *keys: int) -> np.random.Generator:
    """Get a numpy random generator for the ``(seed, *keys)`` stream.

    Generators are thread-safe to hand out: every call builds an independent one.
    """
    return np.random.default_rng(derive_seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit integer seed for the ``(seed, *keys)`` stream, e.g. to record in metadata."""
    return int(derive_seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
