"""Batched particle storage: flat parallel arrays keyed by particle index.

The particle-to-mesh mapping is a single element id per particle. Capacity
is fixed at construction; loading a step and tracing reuse the same buffers
with no further allocation.
"""

from __future__ import annotations

import numpy as np
from numba import float64, int8, int32, int64
from numba.experimental import jitclass

_batch_spec = [
    ("capacity", int64),
    ("count", int64),
    ("position", float64[:, ::1]),
    ("destination", float64[:, ::1]),
    ("direction", float64[:, ::1]),
    ("weight", float64[::1]),
    ("group", int32[::1]),
    ("element", int32[::1]),
    ("flying", int8[::1]),
    ("alive", int8[::1]),
]


@jitclass(_batch_spec)
class ParticleBatch:
    """Structure-of-arrays particle store with fixed capacity.

    flying implies alive and a valid element id; direction caches the unit
    vector from position to destination while a step is loaded.
    """

    def __init__(self, capacity):
        self.capacity = capacity
        self.count = 0
        self.position = np.zeros((capacity, 3))
        self.destination = np.zeros((capacity, 3))
        self.direction = np.zeros((capacity, 3))
        self.weight = np.zeros(capacity)
        self.group = np.zeros(capacity, dtype=np.int32)
        self.element = np.full(capacity, -1, dtype=np.int32)
        self.flying = np.zeros(capacity, dtype=np.int8)
        self.alive = np.zeros(capacity, dtype=np.int8)


def create_batch(capacity: int) -> ParticleBatch:
    """Preallocate a batch for up to `capacity` particles."""
    if not isinstance(capacity, (int, np.integer)) or capacity <= 0:
        raise ValueError(f"capacity must be a positive integer, "
                         f"got {capacity!r}")
    return ParticleBatch(int(capacity))


def load_step(batch: ParticleBatch, destinations, flying, weights,
              count: int) -> None:
    """Overwrite step data for particles [0, count) and refresh directions.

    destinations is flat (3*count) or (count, 3); flying and weights are
    length count. Positions are left as-is (they carry across steps).
    """
    count = int(count)
    if count < 0 or count > batch.capacity:
        raise ValueError(f"count {count} outside [0, {batch.capacity}]")
    dest = np.asarray(destinations, dtype=np.float64).reshape(-1)
    fly = np.asarray(flying).reshape(-1).astype(np.int8)
    wgt = np.asarray(weights, dtype=np.float64).reshape(-1)
    if dest.size != 3 * count or fly.size != count or wgt.size != count:
        raise ValueError(
            f"array sizes ({dest.size}, {fly.size}, {wgt.size}) do not match "
            f"count {count} (need 3*count, count, count)")
    if count == 0:
        return
    batch.count = count
    batch.flying[count:] = 0  # only loaded particles participate
    batch.destination[:count] = dest.reshape(count, 3)
    batch.flying[:count] = fly
    batch.weight[:count] = wgt
    # flying implies alive
    np.bitwise_or(batch.alive[:count], fly, out=batch.alive[:count])

    d = batch.direction[:count]
    np.subtract(batch.destination[:count], batch.position[:count], out=d)
    norm = np.sqrt(np.einsum("ij,ij->i", d, d))
    nz = norm > 0.0
    d[nz] /= norm[nz, None]
    d[~nz] = 0.0  # zero-length step: marked reached on the first sweep


def active_count(batch: ParticleBatch) -> int:
    """Number of particles currently flying."""
    return int(batch.flying.astype(np.int64).sum())
