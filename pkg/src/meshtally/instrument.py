"""Timing and allocation instrumentation.

Allocation counts come from the compiled kernels' runtime allocator, which
tracks every allocation it serves; this is the domain in which the two
tally backends differ (the adjacency path allocates nothing after setup,
the baseline path allocates per segment by construction). Peak memory is
the tracemalloc high-water mark over the probed call, covering Python and
array data, rather than OS-level RSS.
"""

from __future__ import annotations

import csv
import time
import tracemalloc
from dataclasses import dataclass, fields

from numba.core.runtime import rtsys

try:
    from numba.core.runtime import _nrt_python as _nrt
    _nrt.memsys_enable_stats()
    _HAVE_NRT_STATS = bool(_nrt.memsys_stats_enabled())
except (ImportError, AttributeError):  # pragma: no cover
    _HAVE_NRT_STATS = False


def kernel_alloc_count() -> int:
    """Total allocations served by the kernel runtime so far (-1 when the
    statistics facility is unavailable)."""
    if not _HAVE_NRT_STATS:
        return -1
    return int(rtsys.get_allocation_stats().alloc)


@dataclass(frozen=True)
class ProbeResult:
    allocs: int        # kernel-allocator allocation events (-1 unsupported)
    peak_bytes: int    # tracemalloc high-water mark during the call
    elapsed_s: float
    value: object      # what the probed callable returned

    @property
    def supported(self) -> bool:
        return self.allocs >= 0


def allocation_probe(thunk, *, trace_peak: bool = True) -> ProbeResult:
    """Run `thunk()` and report kernel allocation events and peak memory.

    tracemalloc slows Python-side execution; time runs and probe runs
    separately when both matter.
    """
    before = kernel_alloc_count()
    peak = 0
    t0 = time.perf_counter()
    if trace_peak:
        tracemalloc.start()
        try:
            value = thunk()
            peak = tracemalloc.get_traced_memory()[1]
        finally:
            tracemalloc.stop()
    else:
        value = thunk()
    elapsed = time.perf_counter() - t0
    after = kernel_alloc_count()
    allocs = after - before if (before >= 0 and after >= 0) else -1
    return ProbeResult(allocs=allocs, peak_bytes=int(peak),
                      elapsed_s=elapsed, value=value)


BENCH_COLUMNS = [
    "backend", "elements", "particles", "batches", "threads",
    "t_init_s", "t_batch_s", "t_output_s", "allocs", "peak_bytes",
    "leak_fraction",
]


@dataclass(frozen=True)
class BenchRecord:
    """One benchmark row; t_init_s includes search initialization (tree
    construction / localization walks), t_batch_s is transport + tally."""

    backend: str
    elements: int
    particles: int
    batches: int
    threads: int
    t_init_s: float
    t_batch_s: float
    t_output_s: float
    allocs: int
    peak_bytes: int
    leak_fraction: float

    def row(self) -> list:
        return [getattr(self, c) for c in BENCH_COLUMNS]


def write_bench_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())


def format_bench_table(records) -> str:
    lines = [",".join(BENCH_COLUMNS)]
    for rec in records:
        lines.append(",".join(str(v) for v in rec.row()))
    return "\n".join(lines)
