"""Compare the compiled and pure-NumPy sweep backends on one instance.

Runs the full backward induction twice in subprocesses — once with the
compiled kernels and once with ``IMPACTDP_NO_NUMBA=1`` — on a five-date
binomial tree with the default grid sizes, then reports wall times and
verifies the two backends produced bit-identical value layers.

Usage: python3 benchmarks/bench_kernels.py
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def worker(backend: str) -> None:
    if backend == "numpy":
        os.environ["IMPACTDP_NO_NUMBA"] = "1"
    else:
        os.environ.pop("IMPACTDP_NO_NUMBA", None)

    from impactdp import _kernels
    from impactdp.solver import backward_induce
    from impactdp.tree import GeneratorSpec, generate
    from impactdp.utility import exponential

    tree = generate(
        GeneratorSpec(
            kind="binomial", T=5, zeta0=0.1, resilience=0.2, depth=1.0,
            p0=1.0, step=0.5, p_up=0.7,
        )
    )
    u = exponential(1.0)

    start = time.perf_counter()
    vf = backward_induce(tree, u, 0.0)  # first call includes any JIT compilation
    cold = time.perf_counter() - start

    start = time.perf_counter()
    vf = backward_induce(tree, u, 0.0)
    warm = time.perf_counter() - start

    digest = hashlib.sha256()
    for node_id in sorted(vf.layers):
        digest.update(vf.layers[node_id].values.tobytes())
        digest.update(vf.layers[node_id].policy.tobytes())
    print(
        json.dumps(
            {
                "backend": _kernels.BACKEND,
                "requested": backend,
                "cold_s": cold,
                "warm_s": warm,
                "root_value": float(vf.layers[tree.root_id].values.max()),
                "sha256": digest.hexdigest(),
                "diagnostics": vf.diagnostics,
            }
        )
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--worker", choices=("numba", "numpy"), help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.worker:
        worker(args.worker)
        return 0

    results = {}
    for backend in ("numba", "numpy"):
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker", backend],
            capture_output=True,
            text=True,
            check=True,
        )
        results[backend] = json.loads(proc.stdout.strip().splitlines()[-1])

    for backend, res in results.items():
        note = "" if res["backend"] == res["requested"] else f" (fell back to {res['backend']})"
        print(
            f"{backend:>6}{note}: cold {res['cold_s']:8.3f}s   warm {res['warm_s']:8.3f}s"
        )
    identical = results["numba"]["sha256"] == results["numpy"]["sha256"]
    speedup = results["numpy"]["warm_s"] / max(results["numba"]["warm_s"], 1e-12)
    print(f"warm speedup (numpy / numba): {speedup:.1f}x")
    print(f"value and policy layers bit-identical: {identical}")
    if not identical:
        print("backends disagree; this is a bug", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
