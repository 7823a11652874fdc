"""Benchmark the two KGE training kernels against each other.

The embedding trainer dispatches its inner loop to a compiled Cython
module (`graphmt._kge_inner`) when importable, else to the pure-Python
twin (`graphmt.kge_inner`). This script runs the same training job on
both backends, checks that the per-epoch losses agree to tolerance,
and reports wall time and speedup.

Usage:
    python3 benchmarks/kge_backend_bench.py [--entities N] [--dim D]
        [--epochs E] [--repeats R]
"""

from __future__ import annotations

import argparse
import importlib
import time

import graphmt.kge as kge
from graphmt.kb import triples_to_records
from graphmt.kge import KgeConfig, train_kge
from graphmt.synth import generate_block_kg


def _load_backends():
    backends = {"python": importlib.import_module("graphmt.kge_inner")}
    try:
        backends["cython"] = importlib.import_module("graphmt._kge_inner")
    except ImportError:
        pass
    return backends


def _run(kernel, records, config, repeats: int):
    # swap the dispatch target so the public entry point is what we time
    previous = kge._kernel
    kge._kernel = kernel
    try:
        best = float("inf")
        losses = None
        for _ in range(repeats):
            start = time.perf_counter()
            model = train_kge(records, config)
            best = min(best, time.perf_counter() - start)
            losses = model.epoch_losses
        return best, losses
    finally:
        kge._kernel = previous


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--entities", type=int, default=400)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    kg = generate_block_kg(entity_count=args.entities, blocks=8,
                           edges_per_entity=4, seed=args.seed)
    records = triples_to_records(kg, mode="structure")
    config = KgeConfig(dim=args.dim, epochs=args.epochs, lr=0.05,
                       mode="structure", bucket_count=1 << 14,
                       seed=args.seed, threads=1)
    print("records\t%d" % len(records))
    print("dim\t%d\tepochs\t%d\trepeats\t%d"
          % (args.dim, args.epochs, args.repeats))

    backends = _load_backends()
    if "cython" not in backends:
        print("compiled backend not importable; timing python only")

    results = {}
    for name, kernel in sorted(backends.items()):
        seconds, losses = _run(kernel, records, config, args.repeats)
        results[name] = (seconds, losses)
        print("%s\t%.3fs\tfinal_loss\t%.6f" % (name, seconds, losses[-1]))

    if len(results) == 2:
        py_time, py_losses = results["python"]
        cy_time, cy_losses = results["cython"]
        drift = max(abs(a - b) for a, b in zip(py_losses, cy_losses))
        print("speedup\t%.1fx" % (py_time / cy_time))
        print("max_epoch_loss_drift\t%.2e" % drift)
        # same update formulas, different summation order
        if drift > 1e-6:
            raise SystemExit("backends disagree beyond tolerance")


if __name__ == "__main__":
    main()
