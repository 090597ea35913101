"""Baseline DC power flow, LODF factors and the cancelling-flow model.

This module is the "physical" side of the engine: it solves full grids and
is the oracle every superposition result is checked against.  One sparse
factorization is built per topology (:class:`DcSolver`) and reused for every
right-hand side; single-branch disconnections and reconnections are derived
from that factorization by rank-one updates, which is exact in DC.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid_model import (
    Disconnect,
    Grid,
    Reconnect,
    apply_change_set,
    connected_components,
)

#: Residual bound on nodal balance accepted from a direct solve (per-unit).
SOLVER_TOL = 1e-10

#: |1 - PTDF_oo| below this means the outage islands the grid.
ISLANDING_TOL = 1e-9


class SolverError(Exception):
    """Base class for DC solver errors."""


class SingularSystem(SolverError):
    """The nodal susceptance system cannot be solved."""


class IslandingOutage(SolverError):
    """The requested outage would split the grid."""


@dataclass(frozen=True)
class SolvedState:
    """One DC solution: phases per bus and flows per branch.

    Flows are oriented from -> to and are exactly zero on disconnected
    branches.  ``grid`` identifies the topology the state was solved on.
    """

    grid: Grid
    theta: np.ndarray  # one angle per grid.buses entry, slack at 0
    flows: np.ndarray  # one flow per grid.branches entry

    @property
    def topology(self) -> tuple:
        return self.grid.topology_key()

    def angle(self, bus_id: str) -> float:
        return float(self.theta[self.grid.bus_index(bus_id)])

    def flow(self, branch_id: str) -> float:
        return float(self.flows[self.grid.branch_index(branch_id)])

    def delta_theta(self, branch_id: str) -> float:
        """Phase difference theta_from - theta_to across a branch.

        Defined for disconnected branches too; that difference is the
        reconnection observable.
        """
        br = self.grid.branch(branch_id)
        return float(
            self.theta[self.grid.bus_index(br.from_bus)]
            - self.theta[self.grid.bus_index(br.to_bus)]
        )

    def injections(self) -> np.ndarray:
        """Realised nodal injections, slack imbalance included."""
        out = np.zeros(len(self.grid.buses))
        for i, br in enumerate(self.grid.branches):
            if not br.connected:
                continue
            out[self.grid.bus_index(br.from_bus)] += self.flows[i]
            out[self.grid.bus_index(br.to_bus)] -= self.flows[i]
        return out


@dataclass(frozen=True)
class LodfRow:
    """Line outage distribution factors of one outage over all branches."""

    outage: str
    factors: Mapping[str, float]


class DcSolver:
    """Factorized DC solver for one fixed topology.

    The reduced nodal susceptance matrix is factorized once in the
    constructor; every solve afterwards is a pair of triangular solves.
    Solves are serialised behind a lock so one solver can be shared by
    concurrent workers.
    """

    def __init__(self, grid: Grid):
        count, _ = connected_components(grid)
        if count != 1:
            raise SingularSystem(f"grid has {count} components")
        if len(grid.buses) < 2:
            raise SingularSystem("need at least two buses")
        self.grid = grid
        self._lock = threading.Lock()

        n = len(grid.buses)
        self._slack_idx = grid.bus_index(grid.slack)
        # Map full bus index -> reduced index (slack removed).
        self._reduced_of = np.full(n, -1, dtype=np.int64)
        keep = [i for i in range(n) if i != self._slack_idx]
        self._reduced_of[keep] = np.arange(n - 1)
        self._kept = np.array(keep, dtype=np.int64)

        conn = [br for br in grid.branches if br.connected]
        self._conn_ids = [br.id for br in conn]
        self._conn_pos = np.array([grid.branch_index(b.id) for b in conn], dtype=np.int64)
        self._from = np.array([grid.bus_index(b.from_bus) for b in conn], dtype=np.int64)
        self._to = np.array([grid.bus_index(b.to_bus) for b in conn], dtype=np.int64)
        self._sigma = np.array([b.susceptance for b in conn])

        rows = np.concatenate([self._from, self._to, self._from, self._to])
        cols = np.concatenate([self._from, self._to, self._to, self._from])
        vals = np.concatenate([self._sigma, self._sigma, -self._sigma, -self._sigma])
        full = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        reduced = full[keep, :][:, keep].tocsc()
        self._bbus = reduced
        try:
            self._lu = spla.splu(reduced)
        except RuntimeError as exc:  # pragma: no cover - splu failure mode
            raise SingularSystem(str(exc)) from None

        self._injections = np.array([b.injection for b in grid.buses])
        self._dipole_cache: dict[str, np.ndarray] = {}

    # -- basics ------------------------------------------------------------

    @property
    def bbus(self) -> sp.csc_matrix:
        return self._bbus

    @property
    def bus_order(self) -> tuple[str, ...]:
        """Non-slack bus ids in reduced-system order."""
        return tuple(self.grid.buses[i].id for i in self._kept)

    def _solve_reduced(self, rhs: np.ndarray) -> np.ndarray:
        with self._lock:
            return self._lu.solve(rhs)

    def _expand(self, reduced_theta: np.ndarray) -> np.ndarray:
        theta = np.zeros(len(self.grid.buses))
        theta[self._kept] = reduced_theta
        return theta

    def _branch_flows(self, theta: np.ndarray) -> np.ndarray:
        flows = np.zeros(len(self.grid.branches))
        flows[self._conn_pos] = self._sigma * (theta[self._from] - theta[self._to])
        return flows

    def solve(self, injections: np.ndarray | None = None) -> SolvedState:
        """Solve for the grid's own injections, or a caller-supplied vector.

        ``injections`` is indexed like ``grid.buses``; the slack entry is
        ignored (the slack absorbs the imbalance).
        """
        p = self._injections if injections is None else np.asarray(injections, dtype=float)
        if p.shape != (len(self.grid.buses),):
            raise ValueError("injection vector has wrong length")
        rhs = p[self._kept]
        theta = self._expand(self._solve_reduced(rhs))
        residual = self._bbus @ theta[self._kept] - rhs
        if not np.all(np.isfinite(theta)) or np.max(np.abs(residual), initial=0.0) > SOLVER_TOL:
            raise SingularSystem("nodal balance residual exceeds tolerance")
        return SolvedState(grid=self.grid, theta=theta, flows=self._branch_flows(theta))

    # -- rank-one topology updates ------------------------------------------

    def dipole_response(self, branch_id: str) -> np.ndarray:
        """Phase response to a unit dipole (+1 at from-bus, -1 at to-bus).

        Cached per branch; this is the only linear-algebra work a
        single-branch topology update needs.
        """
        cached = self._dipole_cache.get(branch_id)
        if cached is not None:
            return cached
        br = self.grid.branch(branch_id)
        rhs = np.zeros(len(self._kept))
        fi = self._reduced_of[self.grid.bus_index(br.from_bus)]
        ti = self._reduced_of[self.grid.bus_index(br.to_bus)]
        if fi >= 0:
            rhs[fi] += 1.0
        if ti >= 0:
            rhs[ti] -= 1.0
        z = self._expand(self._solve_reduced(rhs))
        self._dipole_cache[branch_id] = z
        return z

    def prefetch_dipoles(self, branch_ids: Sequence[str]) -> None:
        """Batch-solve the dipole responses of many branches in one call.

        Fills the per-branch cache; one multi-RHS triangular solve is far
        cheaper than one call per branch when screening thousands of
        contingencies.
        """
        missing = [b for b in dict.fromkeys(branch_ids) if b not in self._dipole_cache]
        if not missing:
            return
        rhs = np.zeros((len(self._kept), len(missing)))
        for col, branch_id in enumerate(missing):
            br = self.grid.branch(branch_id)
            fi = self._reduced_of[self.grid.bus_index(br.from_bus)]
            ti = self._reduced_of[self.grid.bus_index(br.to_bus)]
            if fi >= 0:
                rhs[fi, col] += 1.0
            if ti >= 0:
                rhs[ti, col] -= 1.0
        solved = self._solve_reduced(rhs)
        for col, branch_id in enumerate(missing):
            self._dipole_cache[branch_id] = self._expand(solved[:, col])

    def ptdf_column(self, branch_id: str) -> np.ndarray:
        """Flow induced on every branch by a unit dipole across ``branch_id``."""
        z = self.dipole_response(branch_id)
        return self._branch_flows(z)

    def self_ptdf(self, branch_id: str) -> float:
        br = self.grid.branch(branch_id)
        z = self.dipole_response(branch_id)
        return float(
            br.susceptance
            * (z[self.grid.bus_index(br.from_bus)] - z[self.grid.bus_index(br.to_bus)])
        )

    def outage_state(self, branch_id: str, ref: SolvedState | None = None) -> SolvedState:
        """Exact post-outage state of one connected branch.

        Equivalent to re-solving the grid without the branch, but derived
        from the reference factorization.
        """
        br = self.grid.branch(branch_id)
        if not br.connected:
            raise IslandingOutage(f"branch {branch_id} is not connected")
        ref = ref if ref is not None else self.solve()
        z = self.dipole_response(branch_id)
        self_ptdf = br.susceptance * (
            z[self.grid.bus_index(br.from_bus)] - z[self.grid.bus_index(br.to_bus)]
        )
        denom = 1.0 - self_ptdf
        if abs(denom) < ISLANDING_TOL:
            raise IslandingOutage(f"outage of {branch_id} would island the grid")
        scale = ref.flow(branch_id) / denom
        theta = ref.theta + scale * z
        flows = ref.flows + scale * self._branch_flows(z)
        flows[self.grid.branch_index(branch_id)] = 0.0
        grid = apply_change_set(self.grid, [Disconnect(branch_id)])
        return SolvedState(grid=grid, theta=theta, flows=flows)

    def reconnect_state(self, branch_id: str, ref: SolvedState | None = None) -> SolvedState:
        """Exact state after closing one disconnected branch (Sherman-Morrison)."""
        br = self.grid.branch(branch_id)
        if br.connected:
            raise SolverError(f"branch {branch_id} is already connected")
        ref = ref if ref is not None else self.solve()
        z = self.dipole_response(branch_id)
        z_across = z[self.grid.bus_index(br.from_bus)] - z[self.grid.bus_index(br.to_bus)]
        scale = br.susceptance * ref.delta_theta(branch_id) / (1.0 + br.susceptance * z_across)
        theta = ref.theta - scale * z
        flows = ref.flows - scale * self._branch_flows(z)
        grid = apply_change_set(self.grid, [Reconnect(branch_id)])
        flows[self.grid.branch_index(branch_id)] = br.susceptance * (
            theta[self.grid.bus_index(br.from_bus)] - theta[self.grid.bus_index(br.to_bus)]
        )
        return SolvedState(grid=grid, theta=theta, flows=flows)


def build_bbus(grid: Grid) -> tuple[sp.csc_matrix, tuple[str, ...]]:
    """Reduced nodal susceptance matrix and its bus ordering."""
    solver = DcSolver(grid)
    return solver.bbus, solver.bus_order


def solve_dc(grid: Grid) -> SolvedState:
    """Full DC solve of a grid (fresh factorization)."""
    return DcSolver(grid).solve()


def lodf(grid: Grid, ref: SolvedState, outage: str) -> LodfRow:
    """Line outage distribution factors for one outage.

    Computed from a unit dipole across the outaged branch, which keeps the
    factors defined even when the reference flow on the branch is zero; the
    self-factor is -1 by convention.  Factors depend on topology only, not
    on injections.
    """
    if ref.grid.topology_key() != grid.topology_key():
        raise SolverError("reference state was solved on a different topology")
    solver = _solver_for(grid)
    br = grid.branch(outage)
    if not br.connected:
        raise IslandingOutage(f"branch {outage} is not connected")
    w = solver.ptdf_column(outage)
    denom = 1.0 - w[grid.branch_index(outage)]
    if abs(denom) < ISLANDING_TOL:
        raise IslandingOutage(f"outage of {outage} would island the grid")
    factors = {}
    for i, other in enumerate(grid.branches):
        if not other.connected:
            continue
        factors[other.id] = -1.0 if other.id == outage else float(w[i] / denom)
    return LodfRow(outage=outage, factors=factors)


_solver_cache: dict[int, DcSolver] = {}


def _solver_for(grid: Grid) -> DcSolver:
    solver = _solver_cache.get(id(grid))
    if solver is None or solver.grid is not grid:
        solver = DcSolver(grid)
        _solver_cache[id(grid)] = solver
        if len(_solver_cache) > 64:
            _solver_cache.pop(next(iter(_solver_cache)))
    return solver


@dataclass(frozen=True)
class CancellingFlowReport:
    """Outcome of checking the virtual-injection model against a real outage.

    ``cancelling_flows`` hold cf per outaged branch with the null-flow
    convention vt + cf = 0 on every virtually connected branch; the dipole
    that realises cf injects -cf at the from-bus and +cf at the to-bus.
    """

    outages: tuple[str, ...]
    cancelling_flows: dict[str, float]
    virtual_flows: dict[str, float]
    max_flow_deviation: float
    max_null_flow_residual: float

    @property
    def ok(self) -> bool:
        return self.max_flow_deviation <= 1e-8 and self.max_null_flow_residual <= 1e-8


def verify_cancelling_flow_model(grid: Grid, outages: Iterable[str]) -> CancellingFlowReport:
    """Check that outages are equivalent to cancelling-flow dipole injections.

    Solves the N_O x N_O self-consistency system for the cancelling flows,
    injects them as dipoles on the *reference* topology, and compares the
    resulting state with an independent solve of the physically modified
    grid.  On every outaged branch the virtual induced flow vt = sigma *
    delta-theta must cancel cf exactly.
    """
    outage_ids = tuple(outages)
    solver = _solver_for(grid)
    ref = solver.solve()

    n_o = len(outage_ids)
    ptdf_cols = [solver.ptdf_column(o) for o in outage_ids]
    out_idx = [grid.branch_index(o) for o in outage_ids]
    a = np.empty((n_o, n_o))
    for i in range(n_o):
        for j in range(n_o):
            a[i, j] = (1.0 if i == j else 0.0) - ptdf_cols[j][out_idx[i]]
    rhs = np.array([ref.flows[i] for i in out_idx])
    try:
        dipoles = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystem(
            f"outage set {outage_ids} islands the grid (singular cancelling-flow system)"
        ) from None
    if not np.all(np.isfinite(dipoles)) or np.max(
        np.abs(a @ dipoles - rhs), initial=0.0
    ) > 1e-6 * max(1.0, np.max(np.abs(rhs), initial=0.0)):
        raise SingularSystem(f"outage set {outage_ids} islands the grid")

    # Virtual model: reference topology plus the dipole injections.
    theta_v = ref.theta.copy()
    for j, o in enumerate(outage_ids):
        theta_v += dipoles[j] * solver.dipole_response(o)
    flows_v = solver._branch_flows(theta_v)

    virtual_flows = {}
    cancelling = {}
    null_residuals = []
    for j, o in enumerate(outage_ids):
        br = grid.branch(o)
        vt = br.susceptance * (
            theta_v[grid.bus_index(br.from_bus)] - theta_v[grid.bus_index(br.to_bus)]
        )
        cf = -dipoles[j]
        virtual_flows[o] = float(vt)
        cancelling[o] = float(cf)
        null_residuals.append(abs(vt + cf))
        # In the equivalent model the branch plus its dipole transport nothing.
        flows_v[out_idx[j]] = vt + cf

    from .grid_model import GridDisconnected

    try:
        physical = solve_dc(apply_change_set(grid, [Disconnect(o) for o in outage_ids]))
    except GridDisconnected as exc:
        raise SingularSystem(f"outage set {outage_ids} islands the grid: {exc}") from None
    deviation = float(np.max(np.abs(flows_v - physical.flows), initial=0.0))
    return CancellingFlowReport(
        outages=outage_ids,
        cancelling_flows=cancelling,
        virtual_flows=virtual_flows,
        max_flow_deviation=deviation,
        max_null_flow_residual=float(max(null_residuals, default=0.0)),
    )
