"""Compiled core vs pure-Python fallback.

Times the eigen-solver and the two projections directly on each backend,
then a full solve in a subprocess per backend (the solver picks its backend
at import, so ``COCO_PURE_PYTHON`` has to be set before ``coco`` loads).

    python3 benchmarks/bench_core.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from coco import _fallback

try:
    from coco import _core
except ImportError:  # extension not built
    _core = None

SOLVE_SNIPPET = """
import json, time
import numpy as np
from coco import _backend
from coco.objective import objective_from_arrays
from coco.solver import solve
rng = np.random.default_rng(0)
T, N, m = 400, 30, {m}
Phi_s = rng.standard_normal((T, N, m))
Phi_i = np.ones((T, N, 1))
X = 0.4 * np.einsum("tnk,k->tn", Phi_s, rng.standard_normal(m)) + rng.standard_normal((T, N))
obj = objective_from_arrays(Phi_s, Phi_i, X, 1.0 / T)
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter()
    rep = solve(obj)
    best = min(best, time.perf_counter() - t0)
print(json.dumps({{"backend": _backend.BACKEND, "seconds": best, "iterations": rep.iterations}}))
"""


def sym(rng, n):
    B = rng.standard_normal((n, n))
    return 0.5 * (B + B.T)


def time_kernels(impl, sizes, repeat):
    rng = np.random.default_rng(1)
    rows = []
    for n in sizes:
        A = sym(rng, n)
        cases = {
            "jacobi_eigh": lambda: impl.jacobi_eigh(A),
            "project_psd_floor": lambda: impl.project_psd_floor(A, 1e-3),
            "project_dsy": lambda: impl.project_dsy(3.0 * A, 1e-3),
        }
        for name, fn in cases.items():
            number = max(1, 200 // n)
            t = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
            rows.append((name, n, t))
    return rows


def time_solve(pure, m, repeat):
    env = dict(os.environ, COCO_PURE_PYTHON="1" if pure else "0")
    code = SOLVE_SNIPPET.format(m=m, repeat=repeat)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[4, 11, 21, 41])
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not built; only the fallback can be timed")
    impls = [_fallback] + ([_core] if _core is not None else [])
    results = {impl.BACKEND: time_kernels(impl, args.sizes, args.repeat) for impl in impls}
    print(f"{'kernel':<20}{'n':>5}" + "".join(f"{b + ' [ms]':>16}" for b in results) + f"{'speedup':>10}")
    for k, (name, n, t_py) in enumerate(results["python"]):
        line = f"{name:<20}{n:>5}{1e3 * t_py:>16.3f}"
        if "compiled" in results:
            t_c = results["compiled"][k][2]
            line += f"{1e3 * t_c:>16.3f}{t_py / t_c:>9.1f}x"
        print(line)
    print()
    for m in (3, 10):
        runs = [time_solve(True, m, args.repeat)]
        if _core is not None:
            runs.append(time_solve(False, m, args.repeat))
        desc = ", ".join(f"{r['backend']} {r['seconds']:.3f}s ({r['iterations']} it)" for r in runs)
        print(f"full solve m_sy={m}: {desc}")


if __name__ == "__main__":
    main()
