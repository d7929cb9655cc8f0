"""Compiled vs numpy voxel kernels: matvec throughput and a full chi0 solve.

    python3 benchmarks/bench_kernels.py --sizes 16 32 --repeat 5
"""
import argparse
import timeit

import numpy as np

from stochaeh import backend
from stochaeh import cell_solver as cs
from stochaeh.microstructure import PatternSpec, PointProcessConfig, generate_realization
from stochaeh.tensors import IsotropicMaterial, isotropic_stiffness


def medium(n, seed=0):
    return generate_realization(PointProcessConfig(0.05, (n, n, n), rng_seed=seed), PatternSpec(big_radius=2.0))


def bench_matvec(mesh, c_m, c_i, name, repeat):
    op = cs.VoxelOperator(mesh, c_m, c_i, name)
    u = np.random.default_rng(1).normal(size=mesh.n_dofs)
    return min(timeit.repeat(lambda: op.apply(u), number=1, repeat=repeat))


def bench_solve(mesh, c_m, c_i, name):
    settings = cs.SolverSettings(backend=name)
    t = timeit.default_timer()
    chi = cs.solve_chi0(mesh, c_m, c_i, settings)
    return timeit.default_timer() - t, sum(chi.iterations)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-solve", action="store_true", help="matvec timings only")
    a = ap.parse_args(argv)
    names = [n for n in ("compiled", "python") if n in backend.BACKENDS]
    c_m = isotropic_stiffness(IsotropicMaterial(1.0, 0.3))
    c_i = isotropic_stiffness(IsotropicMaterial(100.0, 0.3))
    print(f"backends: {', '.join(names)}")
    print(f"{'grid':>6} {'backend':>9} {'matvec ms':>10} {'Mdof/s':>8} {'chi0 s':>8} {'CG its':>7}")
    for n in a.sizes:
        mesh = cs.build_mesh(medium(n))
        rows = {}
        for name in names:
            t = bench_matvec(mesh, c_m, c_i, name, a.repeat)
            solve, its = (float("nan"), 0) if a.no_solve else bench_solve(mesh, c_m, c_i, name)
            rows[name] = t
            print(f"{n:>5}^3 {name:>9} {1e3 * t:>10.2f} {mesh.n_dofs / t / 1e6:>8.1f} {solve:>8.2f} {its:>7d}")
        if len(rows) == 2:
            print(f"{'':>6} {'speedup':>9} {rows['python'] / rows['compiled']:>10.1f}x")


if __name__ == "__main__":
    main()
