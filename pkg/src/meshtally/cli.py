"""Command line driver: single runs, backend comparisons, line-flux
extraction, and particle/mesh scaling studies with CSV reports."""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .baseline import KdTree, build_kdtree
from .instrument import (BenchRecord, allocation_probe, format_bench_table,
                         kernel_alloc_count, write_bench_csv)
from .mesh import TetMesh, build_cube_mesh
from .tally import FluxResult, write_flux_csv, write_vtk
from .transport import CrossSections, RunConfig, RunResult, build_engine, run

_SCALING_REPS = 3


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _sigma_s_matrix(spec: str, groups: int) -> np.ndarray:
    """Scalar -> in-group scattering on the diagonal; otherwise a path to a
    whitespace-separated groups x groups matrix."""
    try:
        value = float(spec)
    except ValueError:
        m = np.loadtxt(spec, dtype=np.float64, ndmin=2)
        if m.shape != (groups, groups):
            raise ValueError(
                f"{spec}: scattering matrix is {m.shape}, expected "
                f"({groups}, {groups})")
        return m
    return np.eye(groups) * value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="meshtally",
        description="Monte Carlo track-length tallies on a tetrahedral cube "
                    "mesh: adjacency-walk backend vs tree-localization "
                    "baseline.")
    p.add_argument("--mesh-n", type=int, default=10,
                   help="cube subdivisions per axis (elements = 6*n^3)")
    p.add_argument("--edge", type=float, default=1.0,
                   help="cube edge length in cm")
    p.add_argument("--particles", type=int, default=10_000,
                   help="particles per batch")
    p.add_argument("--batches", type=int, default=5)
    p.add_argument("--groups", type=int, default=1,
                   help="energy groups")
    p.add_argument("--sigma-t", default="100",
                   help="comma-separated per-group total cross sections "
                        "(cm^-1)")
    p.add_argument("--sigma-s", default="100",
                   help="scalar in-group scattering (cm^-1) or a path to a "
                        "groups x groups matrix file")
    p.add_argument("--source-box", default=None, metavar="x0,y0,z0,x1,y1,z1",
                   help="source region (default: the [0, edge/2]^3 octant)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--backend", choices=["adjacency", "baseline", "both"],
                   default="adjacency")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("MESHTALLY_THREADS", "1")))
    p.add_argument("--vtk", default=None, help="flux VTK output path")
    p.add_argument("--csv", default=None,
                   help="flux CSV output path (scaling mode: report CSV)")
    p.add_argument("--line", default=None,
                   metavar="x0,y0,z0,x1,y1,z1,nsamples",
                   help="extract flux along a line to <csv>.line.csv")
    p.add_argument("--scaling-particles", default=None,
                   help="comma-separated particle counts; enables the "
                        "scaling study")
    p.add_argument("--scaling-mesh-n", default=None,
                   help="comma-separated mesh subdivisions for the scaling "
                        "study")
    return p


def _configs_from_args(args) -> list[RunConfig]:
    sigma_t = np.array(_parse_floats(args.sigma_t))
    if sigma_t.size != args.groups:
        raise ValueError(f"--sigma-t has {sigma_t.size} entries for "
                         f"{args.groups} groups")
    sigma_s = _sigma_s_matrix(args.sigma_s, args.groups)
    xs = CrossSections(sigma_t, sigma_s)
    if args.source_box is None:
        h = args.edge / 2.0
        box = ((0.0, 0.0, 0.0), (h, h, h))
    else:
        vals = _parse_floats(args.source_box)
        if len(vals) != 6:
            raise ValueError("--source-box needs 6 comma-separated floats")
        box = (tuple(vals[:3]), tuple(vals[3:]))
    backends = (["adjacency", "baseline"] if args.backend == "both"
                else [args.backend])
    return [
        RunConfig(mesh_n=args.mesh_n, edge_length=args.edge,
                  num_particles=args.particles, num_batches=args.batches,
                  cross_sections=xs, source_box=box, seed=args.seed,
                  backend=b, threads=args.threads)
        for b in backends
    ]


def _suffixed(path: str, backend: str, multiple: bool) -> str:
    if not multiple:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}.{backend}{p.suffix}"))


def _bench_from_result(res: RunResult, allocs: int, peak: int) -> BenchRecord:
    leak = (res.leaked_weight / res.source_weight
            if res.source_weight > 0 else 0.0)
    return BenchRecord(
        backend=res.config.backend, elements=res.mesh.num_elements,
        particles=res.config.num_particles, batches=res.config.num_batches,
        threads=res.threads_used,
        t_init_s=res.t_init + res.t_localization, t_batch_s=res.t_batch,
        t_output_s=res.t_output, allocs=allocs, peak_bytes=peak,
        leak_fraction=leak)


def max_relative_difference(a: FluxResult, b: FluxResult) -> float:
    """Largest per-bin |a-b| / max(|a|, |b|) over bins where either is
    non-zero."""
    am, bm = a.mean, b.mean
    denom = np.maximum(np.abs(am), np.abs(bm))
    nz = denom > 0.0
    if not nz.any():
        return 0.0
    return float((np.abs(am - bm)[nz] / denom[nz]).max())


def extract_line_flux(mesh: TetMesh, flux_result: FluxResult, start, end,
                      samples: int, kdtree: KdTree | None = None) -> list:
    """Sample the piecewise-constant flux along a line.

    Returns rows (distance, element, flux per group); element is -1 with
    empty fluxes for points outside the mesh.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    start = np.asarray(start, dtype=np.float64).reshape(3)
    end = np.asarray(end, dtype=np.float64).reshape(3)
    if kdtree is None:
        kdtree = build_kdtree(mesh)
    mean = np.atleast_2d(flux_result.mean)
    length = float(np.linalg.norm(end - start))
    rows = []
    for k in range(samples):
        f = (k + 0.5) / samples
        point = start + f * (end - start)
        elem = kdtree.query(point)
        if elem < 0:
            rows.append((f * length, -1, None))
        else:
            rows.append((f * length, elem, mean[elem].copy()))
    return rows


def write_line_csv(rows, ngroups: int, path) -> None:
    header = "distance," + ",".join(f"flux_g{g}" for g in range(ngroups))
    lines = [header]
    for dist, elem, vals in rows:
        if vals is None:
            lines.append(f"{float(dist)!r}" + "," * ngroups)
        else:
            lines.append(f"{float(dist)!r}," +
                         ",".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def scaling_study(template: RunConfig, particle_counts, mesh_sizes,
                  reps: int = _SCALING_REPS) -> list[BenchRecord]:
    """Cross-product runs; per cell one warm-up (untimed, probed for peak
    memory) then `reps` timed runs reporting the median active-batch time."""
    if not particle_counts or not mesh_sizes:
        raise ValueError("particle and mesh lists must be non-empty")
    records = []
    for n in mesh_sizes:
        mesh = build_cube_mesh(n, template.edge_length)
        for particles in particle_counts:
            cfg = RunConfig(
                mesh_n=n, edge_length=template.edge_length,
                num_particles=int(particles),
                num_batches=template.num_batches,
                cross_sections=template.cross_sections,
                source_box=template.source_box, seed=template.seed,
                backend=template.backend, threads=template.threads)
            warm = allocation_probe(lambda: run(cfg, mesh=mesh))
            timed = []
            for _ in range(reps):
                a0 = kernel_alloc_count()
                res = run(cfg, mesh=mesh)
                a1 = kernel_alloc_count()
                timed.append((res, a1 - a0 if a0 >= 0 and a1 >= 0 else -1))
            med = sorted(timed, key=lambda t: t[0].t_batch)[len(timed) // 2]
            res, allocs = med
            records.append(_bench_from_result(res, allocs, warm.peak_bytes))
    return records


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.particles <= 0:
        parser.error("--particles must be positive")
    if args.batches <= 0:
        parser.error("--batches must be positive")
    if args.mesh_n < 1:
        parser.error("--mesh-n must be >= 1")
    if args.groups < 1:
        parser.error("--groups must be >= 1")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    line_spec = None
    if args.line is not None:
        vals = _parse_floats(args.line)
        if len(vals) != 7 or int(vals[6]) < 1:
            parser.error("--line needs x0,y0,z0,x1,y1,z1,nsamples")
        line_spec = (vals[:3], vals[3:6], int(vals[6]))

    try:
        configs = _configs_from_args(args)
    except (ValueError, OSError) as err:
        parser.error(str(err))

    try:
        if args.scaling_particles or args.scaling_mesh_n:
            particle_counts = (_parse_ints(args.scaling_particles)
                               if args.scaling_particles
                               else [args.particles])
            mesh_sizes = (_parse_ints(args.scaling_mesh_n)
                          if args.scaling_mesh_n else [args.mesh_n])
            records = []
            for cfg in configs:
                records.extend(scaling_study(cfg, particle_counts, mesh_sizes))
            if args.csv:
                write_bench_csv(records, args.csv)
                print(f"scaling report written to {args.csv}")
            else:
                print(format_bench_table(records))
            return 0

        multiple = len(configs) > 1
        records = []
        results: dict[str, RunResult] = {}
        for cfg in configs:
            probe = allocation_probe(lambda: run(cfg))
            res: RunResult = probe.value
            results[cfg.backend] = res
            t_out = 0.0
            if args.vtk:
                t0 = time.perf_counter()
                write_vtk(res.mesh, res.flux_track,
                          _suffixed(args.vtk, cfg.backend, multiple))
                t_out += time.perf_counter() - t0
            if args.csv:
                t0 = time.perf_counter()
                write_flux_csv(res.flux_track,
                               _suffixed(args.csv, cfg.backend, multiple))
                t_out += time.perf_counter() - t0
            if line_spec is not None:
                start, end, samples = line_spec
                rows = extract_line_flux(res.mesh, res.flux_track, start,
                                         end, samples)
                if args.csv:
                    base = Path(_suffixed(args.csv, cfg.backend, multiple))
                    write_line_csv(rows, res.flux_track.mean.shape[1],
                                   base.with_suffix(".line.csv"))
                else:
                    print(f"# line flux ({cfg.backend})")
                    for dist, elem, vals in rows:
                        print(dist, elem,
                              *(list(vals) if vals is not None else []))
            res.t_output = t_out
            records.append(_bench_from_result(res, probe.allocs,
                                              probe.peak_bytes))

        print(format_bench_table(records))
        if multiple:
            diff = max_relative_difference(results["adjacency"].flux_track,
                                           results["baseline"].flux_track)
            print(f"backend equivalence: max relative flux difference = "
                  f"{diff:.3e}")
        return 0
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
