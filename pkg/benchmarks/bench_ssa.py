"""Throughput of the compiled and pure-Python simulation backends.

    python3 benchmarks/bench_ssa.py [--preset REG2] [--sim-ms 1000] [--py-sim-ms 50]

The Python backend is far slower, so it simulates a shorter stretch; the
comparison is per event.  Both backends first run a short shared warm-up so
the measured interval starts from a busy network.
"""

from __future__ import annotations

import argparse
import time

from neurofield.model import GridSpec, preset
from neurofield.simulator import InitSpec, available_backends, init, run


def measure(config, backend: str, sim_ms: float, seed: int, warm_ms: float) -> dict:
    state = init(config, InitSpec("all-zero", seed=seed), backend=backend)
    run(state, warm_ms)
    t0 = time.perf_counter()
    log = run(state, warm_ms + sim_ms)
    wall = time.perf_counter() - t0
    # external arrivals + pending-kick deliveries + refractory exits
    events = int(log.ext_arrivals.sum() + log.delivered.sum() + log.n_spikes)
    return {"backend": backend, "sim_ms": sim_ms, "wall_s": wall, "events": events,
            "ns_per_event": 1e9 * wall / max(events, 1), "s_per_sim_s": wall / (sim_ms / 1000.0)}


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="REG2")
    ap.add_argument("--rows", type=int, default=3)
    ap.add_argument("--cols", type=int, default=3)
    ap.add_argument("--lambda-even", type=float, default=6000.0)
    ap.add_argument("--sim-ms", type=float, default=1000.0, help="simulated ms for the compiled backend")
    ap.add_argument("--py-sim-ms", type=float, default=50.0, help="simulated ms for the Python backend")
    ap.add_argument("--warm-ms", type=float, default=20.0)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)

    config = preset(args.preset, args.lambda_even, GridSpec(args.rows, args.cols))
    backends = available_backends()
    results = []
    for b in backends:
        sim = args.sim_ms if b == "cython" else args.py_sim_ms
        results.append(measure(config, b, sim, args.seed, args.warm_ms))

    print(f"{args.preset} {args.rows}x{args.cols}, lambda_even={args.lambda_even:g}/s")
    print(f"{'backend':<10}{'sim ms':>9}{'events':>12}{'wall s':>9}{'ns/event':>10}{'s/sim-s':>9}")
    for r in results:
        print(f"{r['backend']:<10}{r['sim_ms']:>9g}{r['events']:>12d}{r['wall_s']:>9.2f}"
              f"{r['ns_per_event']:>10.0f}{r['s_per_sim_s']:>9.2f}")
    by = {r["backend"]: r for r in results}
    if "cython" in by and "python" in by:
        print(f"speedup per event: {by['python']['ns_per_event'] / by['cython']['ns_per_event']:.0f}x")
    elif "cython" not in by:
        print("compiled backend not built; only the Python fallback was measured")


if __name__ == "__main__":
    main()
