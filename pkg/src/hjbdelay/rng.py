"""Counter-based random streams, one per simulated path.

Every path id owns a Philox stream keyed by ``(seed, tag, path_id)``, so a
path's Brownian increments do not depend on how paths are chunked or which
worker simulates them.  ``tag`` separates unrelated uses of the same seed
(outer paths, nested inner paths, probe sampling, ...).
"""

import numpy as np

TAG_BITS = 40
MAIN = 0
INNER = 1
PROBE = 2
PAIRS = 3


def path_generator(seed, path_id, tag=MAIN):
    if not 0 <= path_id < (1 << TAG_BITS):
        raise ValueError("path id out of range")
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, (int(tag) << TAG_BITS) | int(path_id)]
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(seed, path_ids, steps, n, dt, tag=MAIN):
    """Increments of shape ``(steps, len(path_ids), n)``."""
    path_ids = np.asarray(path_ids)
    out = np.empty((steps, len(path_ids), n))
    scale = np.sqrt(dt)
    for j, pid in enumerate(path_ids):
        out[:, j, :] = path_generator(seed, int(pid), tag).standard_normal((steps, n))
    out *= scale
    return out


def probe_generator(seed, stream=0):
    """A generator for sampling probe points (not paths)."""
    return path_generator(seed, stream, PROBE)
