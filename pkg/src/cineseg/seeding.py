"""Deterministic sub-seed derivation (splitmix64 finalizer chain)."""

_MASK = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix_seed(seed, *keys):
    """Fold integer ``keys`` into ``seed``; order matters, streams never overlap."""
    h = splitmix64(int(seed) & _MASK)
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK))
    return h
