#!/usr/bin/env python3
"""Regenerate the bundled synthetic benchmark grids.

The scaling benchmarks need meshed, connected grids at roughly 118, 300 and
1354 buses.  The genuine IEEE / Pegase case files of those sizes are not
redistributable from this environment, so deterministic synthetic grids of
the same size take their place: a ring backbone (keeps the grid connected)
plus mostly-local chords, realistic per-unit reactances, a balanced
generation/load pattern, a few parallel circuits and a couple of
disconnected spare branches for reconnection scenarios.

Usage: python tools/make_synthetic_cases.py [output_dir]
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

SIZES = {"synth118": 118, "synth300": 300, "synth1354": 1354}
CHORDS_PER_BUS = 0.45
PARALLEL_FRACTION = 0.02
SPARE_CHORDS = 3


def build_case(name: str, n_buses: int, seed: int) -> str:
    rng = np.random.default_rng(seed)

    edges: list[tuple[int, int, float, int]] = []  # (from, to, x, status)

    def reactance() -> float:
        return float(np.exp(rng.uniform(np.log(0.02), np.log(0.5))))

    # Ring backbone: guarantees single-component connectivity.
    for i in range(1, n_buses + 1):
        j = i + 1 if i < n_buses else 1
        edges.append((i, j, reactance(), 1))

    # Mostly-local chords with a sprinkle of long-range ties.
    n_chords = int(round(CHORDS_PER_BUS * n_buses))
    seen_pairs = {(min(e[0], e[1]), max(e[0], e[1])) for e in edges}
    added = 0
    while added < n_chords:
        i = int(rng.integers(1, n_buses + 1))
        if rng.random() < 0.85:
            j = i + int(rng.integers(2, 10))
            if j > n_buses:
                continue
        else:
            j = int(rng.integers(1, n_buses + 1))
        lo, hi = min(i, j), max(i, j)
        if lo == hi or (lo, hi) in seen_pairs:
            continue
        seen_pairs.add((lo, hi))
        edges.append((lo, hi, reactance(), 1))
        added += 1

    # Parallel circuits on a few heavily built corridors.
    n_parallel = max(2, int(PARALLEL_FRACTION * len(edges)))
    for idx in rng.choice(len(edges), size=n_parallel, replace=False):
        f, t, x, _ = edges[int(idx)]
        edges.append((f, t, x * float(rng.uniform(0.9, 1.3)), 1))

    # Disconnected spare chords (never part of the ring).
    for _ in range(SPARE_CHORDS):
        while True:
            i = int(rng.integers(1, n_buses - 10))
            j = i + int(rng.integers(3, 9))
            if (i, j) not in seen_pairs:
                seen_pairs.add((i, j))
                edges.append((i, j, reactance(), 0))
                break

    # Generation and load: ~30% generator buses, ~65% load buses.
    is_gen = rng.random(n_buses) < 0.3
    is_gen[0] = True  # slack hosts a generator
    load = np.where(rng.random(n_buses) < 0.65, rng.uniform(10.0, 120.0, n_buses), 0.0)
    gen = np.zeros(n_buses)
    total_load = load.sum()
    weights = rng.uniform(0.5, 2.0, n_buses) * is_gen
    gen = 1.02 * total_load * weights / weights.sum()

    lines = [
        f"function mpc = {name}",
        f"% {name.upper()}  Synthetic {n_buses}-bus benchmark grid.",
        "%   Deterministically generated meshed grid (ring backbone plus local",
        "%   chords) sized to match a standard benchmark case; not IEEE data.",
        f"%   Regenerate with tools/make_synthetic_cases.py (seed {seed}).",
        "",
        "mpc.version = '2';",
        "mpc.baseMVA = 100;",
        "",
        "%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin",
        "mpc.bus = [",
    ]
    for b in range(1, n_buses + 1):
        bus_type = 3 if b == 1 else (2 if is_gen[b - 1] else 1)
        lines.append(
            f"\t{b}\t{bus_type}\t{load[b - 1]:.2f}\t0\t0\t0\t1\t1\t0\t0\t1\t1.1\t0.9;"
        )
    lines.append("];")
    lines.append("")
    lines.append("%	bus	Pg	Qg	Qmax	Qmin	Vg	mBase	status	Pmax	Pmin")
    lines.append("mpc.gen = [")
    for b in range(1, n_buses + 1):
        if is_gen[b - 1]:
            pg = gen[b - 1]
            lines.append(f"\t{b}\t{pg:.2f}\t0\t0\t0\t1\t100\t1\t{1.5 * pg:.2f}\t0;")
    lines.append("];")
    lines.append("")
    lines.append("%	fbus	tbus	r	x	b	rateA	rateB	rateC	ratio	angle	status	angmin	angmax")
    lines.append("mpc.branch = [")
    for f, t, x, status in edges:
        lines.append(
            f"\t{f}\t{t}\t0\t{x:.5f}\t0\t0\t0\t0\t0\t0\t{status}\t-360\t360;"
        )
    lines.append("];")
    lines.append("")
    return "\n".join(lines)


def main() -> None:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "src" / "topogrid" / "cases"
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    for seed, (name, size) in enumerate(sorted(SIZES.items()), start=7):
        path = out_dir / f"{name}.m"
        path.write_text(build_case(name, size, seed))
        print(f"wrote {path} ({size} buses)")


if __name__ == "__main__":
    main()
