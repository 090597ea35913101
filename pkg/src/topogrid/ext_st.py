"""Superposition of unitary topology changes.

A combined topology change is evaluated without ever solving the target
grid: the reference state and one state per unitary change (the
:class:`StBasis`) feed a small linear system whose solution weights the
basis states.  The weighted flow combination reproduces the target power
flow exactly in DC.

The coefficient system has one row per change.  Row k divides through by
the change's reference observable, so the diagonal is 1 and the
off-diagonal entries are ``1 - Ifo_k(state_j) / Ifo_k(reference)`` where
the observable Ifo depends on the change kind:

* disconnection  -> flow on the branch
* reconnection   -> phase difference across the branch's endpoints
* split          -> residual flow that would cross the busbar coupler
* merge          -> phase difference between the two busbars

Splits and merges behave exactly like disconnecting or reconnecting the
(non-impedant) virtual coupler between the two busbars.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dc_core import DcSolver, SolvedState, SolverError, solve_dc
from .grid_model import (
    ChangeInapplicable,
    Disconnect,
    Grid,
    Merge,
    Reconnect,
    Split,
    Substation,
    Terminal,
    TopologyChange,
    apply_change_set,
    change_label,
)

#: Observables with reference magnitude below this are no-op candidates.
OBSERVABLE_TOL = 1e-9

#: Residual bound accepted for the solved coefficient system.
BETA_RESIDUAL_TOL = 1e-10

#: A superposed flow on a target-disconnected branch above this is a bug.
SELF_CHECK_TOL = 1e-6


class ExtStError(Exception):
    """Base class for superposition-engine errors."""


class InvalidChangeSet(ExtStError):
    """The change list violates basis preconditions (e.g. duplicates)."""


class DegenerateObservable(ExtStError):
    """A change's reference observable vanishes but the change is not a no-op."""


class SingularMatrix(ExtStError):
    """The coefficient system is singular: the combination is inconsistent."""


class SelfCheckFailed(ExtStError):
    """A target-disconnected branch kept flow after superposition."""


@dataclass(frozen=True)
class StBasis:
    """Reference state plus one solved state per unitary change.

    All states are solved under the reference injections; the basis is the
    entire input of the coefficient system and can be reused across any
    subset of its changes.
    """

    grid: Grid
    ref: SolvedState
    changes: tuple[TopologyChange, ...]
    states: tuple[SolvedState, ...]

    def state_of(self, change: TopologyChange) -> SolvedState:
        return self.states[self.changes.index(change)]


@dataclass(frozen=True)
class CoefficientSystem:
    """The assembled linear system over the non-pruned ("active") changes."""

    matrix: np.ndarray
    active: tuple[int, ...]
    pruned: tuple[int, ...]
    labels: tuple[str, ...]
    observables: np.ndarray  # observables[k, s]: change k on state s (col 0 = ref)
    dtheta_rows: tuple[int, ...] = ()  # disconnections demoted to the phase ratio


@dataclass(frozen=True)
class BetaSolution:
    """Weights of the superposition: one beta per change plus alpha.

    ``alpha`` is derived as 1 - sum(betas), never solved for.  Pruned
    (no-op) changes carry beta = 0.
    """

    betas: np.ndarray
    alpha: float
    matrix: np.ndarray
    pruned: tuple[int, ...]
    residual: float
    labels: tuple[str, ...] = ()

    def by_label(self) -> dict[str, float]:
        return dict(zip(self.labels, self.betas))


@dataclass(frozen=True)
class CancellingFlow:
    """Equivalent-model bookkeeping for one virtually connected branch.

    ``vt`` is the Ohm's-law flow the branch carries in the equivalent model
    and ``cf = -vt`` the flow its dipole must carry so the pair transports
    nothing.  ``injection`` is the dipole as a nodal injection vector
    (bus id -> power).
    """

    branch: str
    cf: float
    vt: float
    injection: dict[str, float]


def cancelling_flow(state: SolvedState, branch_id: str) -> CancellingFlow:
    """Cancelling flow of one disconnected branch in a solved state."""
    br = state.grid.branch(branch_id)
    if br.connected:
        raise ValueError(f"branch {branch_id} is connected; no cancelling flow")
    vt = br.susceptance * state.delta_theta(branch_id)
    return CancellingFlow(
        branch=branch_id,
        cf=-vt,
        vt=vt,
        injection={br.from_bus: vt, br.to_bus: -vt},
    )


# -- observables -------------------------------------------------------------


def split_residual_flow(
    state: SolvedState, substation: Substation | str, busbar_2: frozenset[Terminal]
) -> float:
    """Flow that would cross the coupler of a (virtual) busbar split.

    Signed busbar-1 residual: the net power arriving on busbar 1 that has
    to continue to busbar 2.  It equals minus the busbar-2 residual.  The
    substation must be unsplit in ``state``; the injection terminal's share
    is taken from the realised bus balance, so a slack substation is handled
    correctly.
    """
    grid = state.grid
    sub = grid.substation(substation if isinstance(substation, str) else substation.id)
    if sub.split:
        raise ChangeInapplicable(f"substation {sub.id} is split in this state")
    bus = sub.buses[0]

    def incoming(term: Terminal) -> float:
        pf = state.flow(term.branch)
        return pf if term.end == "to" else -pf

    branch_terms = [t for t in grid.terminals_at(sub.id) if t.kind == "branch"]
    moved = set(busbar_2)
    if Terminal.injection() in moved:
        # residual_1 = sum(busbar-1 incoming); bus balance gives nothing extra.
        return sum(incoming(t) for t in branch_terms if t not in moved)
    # Injection stays on busbar 1: by bus balance the busbar-1 residual is
    # minus the power arriving on busbar 2.
    return -sum(incoming(t) for t in branch_terms if t in moved)


def merge_delta_theta(state: SolvedState, substation: Substation | str) -> float:
    """Phase difference between the two busbars of a split substation."""
    grid = state.grid
    sub = grid.substation(substation if isinstance(substation, str) else substation.id)
    if not sub.split:
        raise ChangeInapplicable(f"substation {sub.id} is not split in this state")
    primary, secondary = sub.buses
    return state.angle(primary) - state.angle(secondary)


def observable_value(
    change: TopologyChange, state: SolvedState, dtheta_for_disconnect: bool = False
) -> float:
    """Kind-dependent scalar observable of a change, read off a solved state.

    ``dtheta_for_disconnect`` demotes a disconnection to the proportional
    phase-difference observable; the ratio system is unchanged but the
    no-op threshold then applies to delta-theta instead of the flow.
    """
    if isinstance(change, Disconnect):
        if dtheta_for_disconnect:
            return state.delta_theta(change.branch)
        return state.flow(change.branch)
    if isinstance(change, Reconnect):
        return state.delta_theta(change.branch)
    if isinstance(change, Split):
        return split_residual_flow(state, change.substation, change.busbar_2)
    if isinstance(change, Merge):
        return merge_delta_theta(state, change.substation)
    raise TypeError(f"not a topology change: {change!r}")


# -- basis -------------------------------------------------------------------


def build_basis(
    grid: Grid,
    changes: Sequence[TopologyChange],
    solver: DcSolver | None = None,
) -> StBasis:
    """Solve the reference state and one state per unitary change.

    Disconnections and reconnections reuse the reference factorization
    (rank-one updates); splits and merges change the bus set and get a
    dedicated solve.  Errors are re-raised tagged with the offending
    change.
    """
    change_list = tuple(changes)
    if len(set(change_list)) != len(change_list):
        raise InvalidChangeSet("duplicate change in list")
    by_target: dict[tuple, int] = {}
    for change in change_list:
        if isinstance(change, (Disconnect, Reconnect)):
            if not grid.has_branch(change.branch):
                raise ChangeInapplicable(f"{change_label(change)}: unknown branch")
            key = ("branch", change.branch)
        else:
            if not grid.has_substation(change.substation):
                raise ChangeInapplicable(f"{change_label(change)}: unknown substation")
            key = ("substation", change.substation)
        by_target[key] = by_target.get(key, 0) + 1
        if by_target[key] > 1:
            raise InvalidChangeSet(f"two changes target the same element: {change_label(change)}")

    solver = solver if solver is not None else DcSolver(grid)
    ref = solver.solve()

    states = []
    for change in change_list:
        try:
            if isinstance(change, Disconnect):
                states.append(solver.outage_state(change.branch, ref))
            elif isinstance(change, Reconnect):
                states.append(solver.reconnect_state(change.branch, ref))
            else:
                unitary_grid = apply_change_set(grid, [change])
                if unitary_grid is grid:
                    # Normalised no-op split: the unitary state is the reference.
                    states.append(ref)
                else:
                    states.append(solve_dc(unitary_grid))
        except (SolverError, ChangeInapplicable) as exc:
            raise type(exc)(f"{change_label(change)}: {exc}") from None
    return StBasis(grid=grid, ref=ref, changes=change_list, states=tuple(states))


# -- coefficient system -------------------------------------------------------


def coefficient_matrix(basis: StBasis, tol: float = OBSERVABLE_TOL) -> CoefficientSystem:
    """Assemble the per-change ratio system from the basis observables.

    A change whose reference observable vanishes is pruned as a no-op when
    no other unitary state moves that observable either; if one does, the
    change genuinely cannot be normalised and the superposition basis
    cannot represent the target (:class:`DegenerateObservable`).
    """
    n = len(basis.changes)
    labels = tuple(change_label(c) for c in basis.changes)
    # A disconnection whose reference flow is tiny falls back to the
    # (proportional) phase-difference ratio before any pruning decision.
    dtheta_rows = tuple(
        k for k, change in enumerate(basis.changes)
        if isinstance(change, Disconnect)
        and abs(basis.ref.flow(change.branch)) <= tol
    )
    obs = np.empty((n, n + 1))
    for k, change in enumerate(basis.changes):
        use_dtheta = k in dtheta_rows
        obs[k, 0] = observable_value(change, basis.ref, use_dtheta)
        for j, state in enumerate(basis.states):
            if j == k:
                # Own unitary state: not evaluable for splits/merges (the
                # substation layout changed) and never used - the diagonal
                # of the system is pinned at 1.
                obs[k, j + 1] = 0.0
            else:
                obs[k, j + 1] = observable_value(change, state, use_dtheta)

    active, pruned = [], []
    for k in range(n):
        if abs(obs[k, 0]) > tol:
            active.append(k)
            continue
        others = [abs(obs[k, j + 1]) for j in range(n) if j != k]
        if all(v <= tol for v in others):
            pruned.append(k)
        else:
            raise DegenerateObservable(
                f"{labels[k]}: reference observable vanishes but other changes move it; "
                "the unitary basis cannot represent this combination"
            )

    m = np.eye(len(active))
    for row, k in enumerate(active):
        for col, j in enumerate(active):
            if j != k:
                m[row, col] = 1.0 - obs[k, j + 1] / obs[k, 0]
    return CoefficientSystem(
        matrix=m,
        active=tuple(active),
        pruned=tuple(pruned),
        labels=labels,
        observables=obs,
        dtheta_rows=dtheta_rows,
    )


def solve_betas(system: CoefficientSystem | np.ndarray) -> BetaSolution:
    """Solve the coefficient system; alpha is 1 - sum(beta) by construction."""
    if isinstance(system, np.ndarray):
        system = CoefficientSystem(
            matrix=np.asarray(system, dtype=float),
            active=tuple(range(system.shape[0])),
            pruned=(),
            labels=tuple(f"change_{i}" for i in range(system.shape[0])),
            observables=np.empty((system.shape[0], 0)),
        )
    m = system.matrix
    if m.shape[0] != m.shape[1]:
        raise SingularMatrix("coefficient matrix must be square")
    n_total = len(system.active) + len(system.pruned)
    betas = np.zeros(n_total)
    if m.size:
        if not np.all(np.isfinite(m)):
            raise SingularMatrix("coefficient matrix has non-finite entries")
        rhs = np.ones(m.shape[0])
        try:
            solved = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            raise SingularMatrix(
                "singular coefficient system: the change combination is inconsistent "
                "(it typically islands the grid)"
            ) from None
        residual = float(np.max(np.abs(m @ solved - rhs), initial=0.0))
        if not np.all(np.isfinite(solved)) or residual > BETA_RESIDUAL_TOL:
            raise SingularMatrix(
                f"coefficient system is numerically singular (residual {residual:.3e})"
            )
        for value, k in zip(solved, system.active):
            betas[k] = value
    else:
        residual = 0.0
    return BetaSolution(
        betas=betas,
        alpha=1.0 - float(betas.sum()),
        matrix=m,
        pruned=system.pruned,
        residual=residual,
        labels=system.labels,
    )


def solve_change_set(basis: StBasis) -> BetaSolution:
    """Convenience: assemble and solve the coefficient system of a basis."""
    return solve_betas(coefficient_matrix(basis))


# -- superposition -------------------------------------------------------------


def _reconstruct_theta(grid: Grid, flows: np.ndarray) -> np.ndarray:
    """Bus phases from branch flows by propagation from the slack.

    The superposition theorem is stated on flows; phases follow from
    delta-theta = flow / susceptance along any tree rooted at the slack.
    """
    theta = np.zeros(len(grid.buses))
    adjacency: list[list[tuple[int, int, float, float]]] = [[] for _ in grid.buses]
    for i, br in enumerate(grid.branches):
        if not br.connected:
            continue
        f, t = grid.bus_index(br.from_bus), grid.bus_index(br.to_bus)
        adjacency[f].append((t, i, br.susceptance, -1.0))
        adjacency[t].append((f, i, br.susceptance, +1.0))
    visited = np.zeros(len(grid.buses), dtype=bool)
    stack = [grid.bus_index(grid.slack)]
    visited[stack[0]] = True
    while stack:
        u = stack.pop()
        for v, i, sigma, sign in adjacency[u]:
            if visited[v]:
                continue
            # theta_to = theta_from - pf/sigma when walking from->to.
            theta[v] = theta[u] + sign * flows[i] / sigma
            visited[v] = True
            stack.append(v)
    return theta


def superpose(basis: StBasis, solution: BetaSolution) -> SolvedState:
    """Weighted combination of the basis states: the target power flow.

    Branch flows combine directly (branch identity is stable across all
    states); branches disconnected in the target must come out at zero and
    are clamped after a self-check.  Phases are rebuilt from the flows.
    """
    if len(solution.betas) != len(basis.changes):
        raise ExtStError("solution does not match basis (size mismatch)")
    target_grid = apply_change_set(basis.grid, basis.changes)

    flows = solution.alpha * basis.ref.flows
    for beta, state in zip(solution.betas, basis.states):
        if beta != 0.0:
            flows += beta * state.flows

    for i, br in enumerate(target_grid.branches):
        if not br.connected:
            if abs(flows[i]) > SELF_CHECK_TOL:
                raise SelfCheckFailed(
                    f"branch {br.id} is disconnected in the target but superposes "
                    f"to {flows[i]:.3e}; upstream inputs are inconsistent"
                )
            flows[i] = 0.0

    theta = _reconstruct_theta(target_grid, flows)
    return SolvedState(grid=target_grid, theta=theta, flows=flows)


def superpose_change_set(
    grid: Grid, changes: Sequence[TopologyChange], solver: DcSolver | None = None
) -> tuple[SolvedState, BetaSolution, StBasis]:
    """One-call pipeline: basis, coefficients, superposed target state."""
    basis = build_basis(grid, changes, solver=solver)
    solution = solve_change_set(basis)
    return superpose(basis, solution), solution, basis
