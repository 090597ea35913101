"""Random-but-valid topology actions for benchmarks and stress suites.

Sampling is rejection-based: a candidate change set is kept only if every
change is individually applicable to the reference, the combination leaves
the grid connected, and the coefficient system is well posed.  All
randomness flows through a caller-supplied :class:`numpy.random.Generator`
so runs are reproducible from a seed.
"""

from __future__ import annotations

import numpy as np

from .dc_core import DcSolver, SolverError
from .ext_st import ExtStError, superpose_change_set
from .grid_model import (
    Disconnect,
    Grid,
    GridError,
    Merge,
    Reconnect,
    Split,
    Terminal,
    TopologyChange,
    apply_change_set,
    bridge_branches,
)

CHANGE_KINDS = ("disconnect", "reconnect", "split", "merge")


def prepared_reference(grid: Grid, rng: np.random.Generator) -> Grid:
    """A reference topology with material for every change kind.

    Disconnects a couple of non-bridge branches (so reconnections exist)
    and splits one substation (so merges exist); returns the base grid
    unchanged if the dice say so.
    """
    result = grid
    for _ in range(int(rng.integers(0, 3))):
        candidates = sorted(bridge_branches(result) ^ {
            br.id for br in result.branches if br.connected
        })
        if not candidates:
            break
        branch = candidates[int(rng.integers(0, len(candidates)))]
        try:
            result = apply_change_set(result, [Disconnect(branch)])
        except GridError:
            continue
    if rng.random() < 0.5:
        split = sample_split(result, rng)
        if split is not None:
            try:
                result = apply_change_set(result, [split])
            except GridError:
                pass
    return result


def sample_split(grid: Grid, rng: np.random.Generator) -> Split | None:
    """A random split of a random unsplit substation with >= 4 terminals."""
    unsplit = [s for s in grid.substations if not s.split]
    rng.shuffle(unsplit)
    for sub in unsplit[:12]:
        terminals = grid.terminals_at(sub.id)
        if len(terminals) < 4:
            continue
        k = int(rng.integers(1, len(terminals) - 1))
        picked = list(terminals)
        rng.shuffle(picked)
        return Split(substation=sub.id, busbar_2=frozenset(picked[:k]))
    return None


def _sample_change(grid: Grid, rng: np.random.Generator, kind: str) -> TopologyChange | None:
    if kind == "disconnect":
        candidates = sorted(
            {br.id for br in grid.branches if br.connected} - bridge_branches(grid)
        )
        if not candidates:
            return None
        return Disconnect(candidates[int(rng.integers(0, len(candidates)))])
    if kind == "reconnect":
        candidates = sorted(br.id for br in grid.branches if not br.connected)
        if not candidates:
            return None
        return Reconnect(candidates[int(rng.integers(0, len(candidates)))])
    if kind == "split":
        return sample_split(grid, rng)
    if kind == "merge":
        candidates = sorted(s.id for s in grid.substations if s.split)
        if not candidates:
            return None
        return Merge(candidates[int(rng.integers(0, len(candidates)))])
    raise ValueError(f"unknown change kind {kind!r}")


def sample_change_set(
    grid: Grid,
    rng: np.random.Generator,
    size: int,
    kinds: tuple[str, ...] = CHANGE_KINDS,
    attempts: int = 60,
    solver: DcSolver | None = None,
) -> tuple[TopologyChange, ...] | None:
    """A change set of the requested size that the engine accepts end to end.

    Returns ``None`` when no valid combination is found within the attempt
    budget (e.g. asking for reconnections on a grid with nothing to
    reconnect).
    """
    solver = solver if solver is not None else DcSolver(grid)
    for _ in range(attempts):
        changes: list[TopologyChange] = []
        used_branches: set[str] = set()
        used_subs: set[str] = set()
        for _ in range(size):
            kind = kinds[int(rng.integers(0, len(kinds)))]
            change = _sample_change(grid, rng, kind)
            if change is None:
                continue
            if isinstance(change, (Disconnect, Reconnect)):
                if change.branch in used_branches:
                    continue
                used_branches.add(change.branch)
            else:
                if change.substation in used_subs:
                    continue
                used_subs.add(change.substation)
            changes.append(change)
        if len(changes) != size:
            continue
        try:
            superpose_change_set(grid, changes, solver=solver)
        except (GridError, SolverError, ExtStError):
            continue
        return tuple(changes)
    return None
