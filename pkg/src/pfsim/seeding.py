"""Deterministic per-trajectory seeds."""
import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master, index):
    """Child seed for trajectory ``index``: ``splitmix64(splitmix64(master) + index)``.

    For a fixed master the map is a bijection of ``index`` mod 2^64, so
    distinct indices never collide.
    """
    if index < 0:
        raise ValueError("index must be >= 0")
    return splitmix64((splitmix64(int(master) & _MASK) + int(index)) & _MASK)


def trajectory_rng(master, index):
    return np.random.default_rng(derive_seed(master, index))
