"""In-memory grid model and the vocabulary of topology changes.

A :class:`Grid` is an immutable snapshot of buses, branches and substations.
Topology reconfiguration never mutates a grid; :func:`apply_change_set`
returns a new one.  The four unitary change kinds are :class:`Disconnect`,
:class:`Reconnect`, :class:`Split` and :class:`Merge`.

Substations follow a two-busbar model with a single coupler: an unsplit
substation hosts one electrical bus, a split one hosts two.  Splitting
materialises a second bus and moves the assigned terminals (branch ends and
the injection lump) onto it; merging collapses the pair back into one bus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Sequence, Union

import networkx as nx


class GridError(Exception):
    """Base class for grid-model errors."""


class ChangeInapplicable(GridError):
    """A topology change's precondition does not hold."""


class GridDisconnected(GridError):
    """A grid (or the result of a change set) has more than one component."""


@dataclass(frozen=True)
class Bus:
    """Electrical bus with its net injection (generation minus load, per-unit)."""

    id: str
    substation: str
    injection: float = 0.0
    is_slack: bool = False


@dataclass(frozen=True)
class Branch:
    """Transmission element between two buses.

    ``susceptance`` is the per-unit series susceptance (1/x) and must be
    strictly positive.  Parallel branches are allowed as long as ids differ.
    """

    id: str
    from_bus: str
    to_bus: str
    susceptance: float
    connected: bool = True


@dataclass(frozen=True, order=True)
class Terminal:
    """One element attachment point at a substation.

    Either the end of a branch (``kind="branch"``) or the bus's injection
    lump (``kind="injection"``).  Used in :class:`Split` assignments.
    """

    kind: str
    branch: str = ""
    end: str = ""

    @classmethod
    def branch_end(cls, branch_id: str, end: str) -> "Terminal":
        if end not in ("from", "to"):
            raise ValueError(f"terminal end must be 'from' or 'to', got {end!r}")
        return cls(kind="branch", branch=branch_id, end=end)

    @classmethod
    def injection(cls) -> "Terminal":
        return cls(kind="injection")

    def __str__(self) -> str:
        if self.kind == "injection":
            return "injection"
        return f"{self.branch}:{self.end}"


@dataclass(frozen=True)
class Substation:
    """Substation hosting one bus (unsplit) or two buses (split).

    ``buses[0]`` is the primary busbar; a second entry is the bus created by
    the most recent split.
    """

    id: str
    buses: tuple[str, ...]

    @property
    def split(self) -> bool:
        return len(self.buses) == 2


@dataclass(frozen=True)
class Disconnect:
    """Open a currently connected branch."""

    branch: str


@dataclass(frozen=True)
class Reconnect:
    """Close a currently disconnected branch."""

    branch: str


@dataclass(frozen=True)
class Split:
    """Split a substation: move ``busbar_2`` terminals onto a new bus.

    An assignment that leaves either busbar empty is normalised to "no
    split" (the grid is returned unchanged), so no isolated bus is created.
    """

    substation: str
    busbar_2: frozenset[Terminal]


@dataclass(frozen=True)
class Merge:
    """Merge a split substation's two buses back into the primary one."""

    substation: str


TopologyChange = Union[Disconnect, Reconnect, Split, Merge]


def change_label(change: TopologyChange) -> str:
    """Stable human-readable label for a change, used in reports and errors."""
    if isinstance(change, Disconnect):
        return f"disconnect:{change.branch}"
    if isinstance(change, Reconnect):
        return f"reconnect:{change.branch}"
    if isinstance(change, Split):
        return f"split:{change.substation}"
    if isinstance(change, Merge):
        return f"merge:{change.substation}"
    raise TypeError(f"not a topology change: {change!r}")


@dataclass(frozen=True)
class Grid:
    """Immutable grid snapshot: buses, branches, substations and slack id."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    substations: tuple[Substation, ...]
    slack: str
    base_mva: float = 100.0
    name: str = ""

    # -- construction ------------------------------------------------------

    @classmethod
    def create(
        cls,
        buses: Iterable[tuple[str, float]],
        branches: Iterable[tuple[str, str, str, float] | tuple[str, str, str, float, bool]],
        slack: str,
        base_mva: float = 100.0,
        name: str = "",
    ) -> "Grid":
        """Build a grid with one (unsplit) substation per bus.

        ``buses`` are ``(id, injection)`` pairs; ``branches`` are
        ``(id, from, to, susceptance[, connected])`` tuples.
        """
        bus_objs = tuple(
            Bus(id=b, substation=f"sub_{b}", injection=p, is_slack=(b == slack))
            for b, p in buses
        )
        branch_objs = tuple(
            Branch(id=t[0], from_bus=t[1], to_bus=t[2], susceptance=t[3],
                   connected=t[4] if len(t) > 4 else True)
            for t in branches
        )
        subs = tuple(Substation(id=f"sub_{b.id}", buses=(b.id,)) for b in bus_objs)
        grid = cls(buses=bus_objs, branches=branch_objs, substations=subs,
                   slack=slack, base_mva=base_mva, name=name)
        grid.validate()
        return grid

    # -- lookups -----------------------------------------------------------

    @cached_property
    def _bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def _branch_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.branches)}

    @cached_property
    def _substation_index(self) -> dict[str, int]:
        return {s.id: i for i, s in enumerate(self.substations)}

    def bus(self, bus_id: str) -> Bus:
        return self.buses[self._bus_index[bus_id]]

    def branch(self, branch_id: str) -> Branch:
        return self.branches[self._branch_index[branch_id]]

    def substation(self, sub_id: str) -> Substation:
        return self.substations[self._substation_index[sub_id]]

    def has_branch(self, branch_id: str) -> bool:
        return branch_id in self._branch_index

    def has_substation(self, sub_id: str) -> bool:
        return sub_id in self._substation_index

    def bus_index(self, bus_id: str) -> int:
        return self._bus_index[bus_id]

    def branch_index(self, branch_id: str) -> int:
        return self._branch_index[branch_id]

    def terminals_at(self, sub_id: str) -> tuple[Terminal, ...]:
        """All terminals of an unsplit substation: branch ends plus injection."""
        sub = self.substation(sub_id)
        if sub.split:
            raise ChangeInapplicable(f"substation {sub_id} is split")
        bus = sub.buses[0]
        terms: list[Terminal] = []
        for br in self.branches:
            if br.from_bus == bus:
                terms.append(Terminal.branch_end(br.id, "from"))
            if br.to_bus == bus:
                terms.append(Terminal.branch_end(br.id, "to"))
        terms.append(Terminal.injection())
        return tuple(terms)

    # -- invariants --------------------------------------------------------

    def validate(self) -> None:
        """Check structural invariants; raises :class:`GridError` on violation."""
        if len(self._bus_index) != len(self.buses):
            raise GridError("duplicate bus ids")
        if len(self._branch_index) != len(self.branches):
            raise GridError("duplicate branch ids")
        if len(self._substation_index) != len(self.substations):
            raise GridError("duplicate substation ids")
        slacks = [b.id for b in self.buses if b.is_slack]
        if slacks != [self.slack]:
            raise GridError(f"exactly one slack bus required, found {slacks}")
        for b in self.buses:
            if not math.isfinite(b.injection):
                raise GridError(f"bus {b.id}: injection not finite")
            sub = self.substation(b.substation)
            if b.id not in sub.buses:
                raise GridError(f"bus {b.id} not listed at substation {sub.id}")
        for br in self.branches:
            if not (math.isfinite(br.susceptance) and br.susceptance > 0.0):
                raise GridError(f"branch {br.id}: susceptance must be finite and > 0")
            if br.from_bus == br.to_bus:
                raise GridError(f"branch {br.id}: from and to bus are identical")
            if br.from_bus not in self._bus_index or br.to_bus not in self._bus_index:
                raise GridError(f"branch {br.id}: unknown endpoint")
        count, _ = connected_components(self)
        if count != 1:
            raise GridDisconnected(f"grid has {count} components")

    def topology_key(self) -> tuple:
        """Canonical fingerprint of the electrical topology.

        Two grids with the same key have the same bus set, branch statuses,
        branch endpoints and slack, hence identical DC solutions.
        """
        return (
            tuple(sorted(b.id for b in self.buses)),
            tuple((br.id, br.from_bus, br.to_bus, br.connected) for br in self.branches),
            self.slack,
        )


def _graph(grid: Grid) -> nx.MultiGraph:
    g = nx.MultiGraph()
    g.add_nodes_from(b.id for b in grid.buses)
    g.add_edges_from(
        (br.from_bus, br.to_bus, br.id) for br in grid.branches if br.connected
    )
    return g


def connected_components(grid: Grid) -> tuple[int, dict[str, int]]:
    """Label every bus with its component index over connected branches."""
    labels: dict[str, int] = {}
    for i, comp in enumerate(nx.connected_components(_graph(grid))):
        for bus in comp:
            labels[bus] = i
    return max(labels.values()) + 1 if labels else 0, labels


def bridge_branches(grid: Grid) -> frozenset[str]:
    """Ids of connected branches whose loss would split the grid.

    A branch is a bridge only if its endpoint pair carries no parallel
    connected branch and the pair is a bridge of the simple graph.
    """
    simple = nx.Graph()
    simple.add_nodes_from(b.id for b in grid.buses)
    multiplicity: dict[frozenset, int] = {}
    for br in grid.branches:
        if not br.connected:
            continue
        key = frozenset((br.from_bus, br.to_bus))
        multiplicity[key] = multiplicity.get(key, 0) + 1
        simple.add_edge(br.from_bus, br.to_bus)
    bridge_pairs = {frozenset(e) for e in nx.bridges(simple)}
    return frozenset(
        br.id
        for br in grid.branches
        if br.connected
        and frozenset((br.from_bus, br.to_bus)) in bridge_pairs
        and multiplicity[frozenset((br.from_bus, br.to_bus))] == 1
    )


# -- change application ----------------------------------------------------


def _split_bus_id(grid: Grid, primary: str) -> str:
    candidate = f"{primary}b"
    while candidate in grid._bus_index:
        candidate += "b"
    return candidate


def _apply_one(grid: Grid, change: TopologyChange) -> Grid:
    if isinstance(change, Disconnect):
        if not grid.has_branch(change.branch):
            raise ChangeInapplicable(f"unknown branch {change.branch}")
        br = grid.branch(change.branch)
        if not br.connected:
            raise ChangeInapplicable(f"branch {br.id} is already disconnected")
        branches = tuple(
            replace(b, connected=False) if b.id == br.id else b for b in grid.branches
        )
        return replace(grid, branches=branches)

    if isinstance(change, Reconnect):
        if not grid.has_branch(change.branch):
            raise ChangeInapplicable(f"unknown branch {change.branch}")
        br = grid.branch(change.branch)
        if br.connected:
            raise ChangeInapplicable(f"branch {br.id} is already connected")
        branches = tuple(
            replace(b, connected=True) if b.id == br.id else b for b in grid.branches
        )
        return replace(grid, branches=branches)

    if isinstance(change, Split):
        if not grid.has_substation(change.substation):
            raise ChangeInapplicable(f"unknown substation {change.substation}")
        sub = grid.substation(change.substation)
        if sub.split:
            raise ChangeInapplicable(f"substation {sub.id} is already split")
        all_terms = set(grid.terminals_at(sub.id))
        unknown = set(change.busbar_2) - all_terms
        if unknown:
            names = ", ".join(str(t) for t in sorted(unknown))
            raise ChangeInapplicable(f"terminals not at {sub.id}: {names}")
        moved = set(change.busbar_2)
        # One empty busbar means the split is electrically void: normalise
        # to "no split" so no isolated bus enters the Bbus matrix.
        if not moved or moved == all_terms:
            return grid
        primary = sub.buses[0]
        new_bus = _split_bus_id(grid, primary)
        move_injection = Terminal.injection() in moved
        old = grid.bus(primary)
        buses = tuple(
            replace(b, injection=0.0 if move_injection else b.injection)
            if b.id == primary
            else b
            for b in grid.buses
        ) + (
            Bus(
                id=new_bus,
                substation=sub.id,
                injection=old.injection if move_injection else 0.0,
                is_slack=False,
            ),
        )

        def end_bus(br: Branch, end: str) -> str:
            current = br.from_bus if end == "from" else br.to_bus
            if current == primary and Terminal.branch_end(br.id, end) in moved:
                return new_bus
            return current

        branches = tuple(
            replace(b, from_bus=end_bus(b, "from"), to_bus=end_bus(b, "to"))
            for b in grid.branches
        )
        subs = tuple(
            replace(s, buses=(primary, new_bus)) if s.id == sub.id else s
            for s in grid.substations
        )
        return replace(grid, buses=buses, branches=branches, substations=subs)

    if isinstance(change, Merge):
        if not grid.has_substation(change.substation):
            raise ChangeInapplicable(f"unknown substation {change.substation}")
        sub = grid.substation(change.substation)
        if not sub.split:
            raise ChangeInapplicable(f"substation {sub.id} is not split")
        primary, secondary = sub.buses
        absorbed = grid.bus(secondary).injection
        buses = tuple(
            replace(b, injection=b.injection + absorbed) if b.id == primary else b
            for b in grid.buses
            if b.id != secondary
        )
        branches = tuple(
            replace(
                b,
                from_bus=primary if b.from_bus == secondary else b.from_bus,
                to_bus=primary if b.to_bus == secondary else b.to_bus,
            )
            for b in grid.branches
        )
        subs = tuple(
            replace(s, buses=(primary,)) if s.id == sub.id else s
            for s in grid.substations
        )
        return replace(grid, buses=buses, branches=branches, substations=subs)

    raise TypeError(f"not a topology change: {change!r}")


def apply_change_set(grid: Grid, changes: Sequence[TopologyChange]) -> Grid:
    """Apply changes in order and return the resulting grid.

    Each change's precondition is checked against the grid produced by the
    preceding ones.  The input grid is never modified.  The final grid must
    be a single connected component; intermediate states may not be.
    """
    result = grid
    for change in changes:
        try:
            result = _apply_one(result, change)
        except ChangeInapplicable as exc:
            raise ChangeInapplicable(f"{change_label(change)}: {exc}") from None
    count, _ = connected_components(result)
    if count != 1:
        raise GridDisconnected(
            f"change set leaves the grid with {count} components"
        )
    return result
