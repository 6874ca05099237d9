"""Compare the compiled assembly kernels with the NumPy fallback.

    python benchmarks/bench_kernels.py [--cells 70] [--repeat 20]
"""
import argparse
import importlib
import time

import numpy as np

from fracms import _kernels_py
from fracms.assembly import geometry
from fracms.physics import NonlinearCoefficients
from fracms.scenarios import reference_mesh


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", type=int, default=70)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    mesh = reference_mesh(args.cells)
    geo = geometry(mesh)
    rng = np.random.default_rng(0)
    coef = rng.uniform(0.5, 2.0, mesh.n_triangles)
    c = rng.uniform(5000, 10000, mesh.n_nodes)
    backends = {"python": _kernels_py}
    try:
        backends["compiled"] = importlib.import_module("fracms._kernels")
    except ImportError:
        print("compiled extension not built; only the fallback is timed")

    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles")
    print(f"{'kernel':<18}{'backend':<10}{'time [ms]':>10}")
    results = {}
    for name, mod in backends.items():
        t1 = best_of(lambda: mod.scatter_add(geo.tri_slots, coef, geo.tri_stiff, geo.nnz), args.repeat)
        t2 = best_of(lambda: mod.element_average(mesh.triangles, c), args.repeat)
        results[name] = (t1, t2)
        print(f"{'scatter_add':<18}{name:<10}{1e3 * t1:>10.3f}")
        print(f"{'element_average':<18}{name:<10}{1e3 * t2:>10.3f}")
    if len(results) == 2:
        a, b = results["python"], results["compiled"]
        print(f"speedup scatter_add {a[0] / b[0]:.1f}x, element_average {a[1] / b[1]:.1f}x")

    # one nonlinear reassembly per step is the hot path of the time loop
    import fracms.kernels as K
    from fracms.assembly import assemble_mass, assemble_stiffness

    model = NonlinearCoefficients()
    for name, mod in backends.items():
        K.scatter_add, K.element_average = mod.scatter_add, mod.element_average
        t = best_of(lambda: (assemble_mass(mesh, model, c), assemble_stiffness(mesh, model, c)), args.repeat)
        print(f"{'M+A reassembly':<18}{name:<10}{1e3 * t:>10.3f}")


if __name__ == "__main__":
    main()
