"""N-1 contingency screening on top of a topological action.

After an action of N unitary changes, every contingency is just one more
disconnection: each outage is screened by solving an (N+1)-sized
coefficient system against the shared action basis, never by re-solving
the grid.  The per-contingency work is one triangular solve against the
reference factorization plus a tiny dense solve, so the cost is nearly
independent of grid size; the baseline it is measured against re-builds a
factorization per contingency.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dc_core import DcSolver, ISLANDING_TOL
from .ext_st import (
    OBSERVABLE_TOL,
    SelfCheckFailed,
    build_basis,
    coefficient_matrix,
    solve_betas,
)
from .grid_model import (
    Disconnect,
    Grid,
    Merge,
    Reconnect,
    Split,
    Terminal,
    TopologyChange,
    apply_change_set,
    bridge_branches,
    change_label,
)

STATUS_OK = "ok"
STATUS_ISLANDING = "islanding"
STATUS_DEGENERATE = "degenerate"
STATUS_SKIPPED = "skipped"


@dataclass(frozen=True)
class ContingencyResult:
    """Outcome for one screened branch outage."""

    branch: str
    status: str
    flows: np.ndarray | None = None  # aligned to the reference branch order
    betas: np.ndarray | None = None  # action betas followed by the outage beta

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class ScreeningReport:
    """All contingency results plus per-branch worst case and timings."""

    grid: Grid
    action: tuple[TopologyChange, ...]
    contingencies: tuple[str, ...]
    results: tuple[ContingencyResult, ...]
    branch_ids: tuple[str, ...]
    worst_abs_flow: np.ndarray
    timings: dict[str, float]
    method: str = "ext_st"

    def result_for(self, branch: str) -> ContingencyResult:
        return self.results[self.contingencies.index(branch)]

    def to_json_dict(self) -> dict:
        """JSON-ready summary: statuses, worst loadings, betas, timings."""
        return {
            "method": self.method,
            "action": [change_label(c) for c in self.action],
            "contingencies": [
                {
                    "branch": res.branch,
                    "status": res.status,
                    "max_abs_flow": float(np.max(np.abs(res.flows))) if res.ok else None,
                    "betas": res.betas.tolist() if res.betas is not None else None,
                }
                for res in self.results
            ],
            "worst_abs_flow": dict(zip(self.branch_ids, self.worst_abs_flow.tolist())),
            "timings": self.timings,
        }


class _ObservableForm:
    """An action observable as linear functionals over flows and phases.

    ``value(state)`` on the reference topology equals
    ``c_flow . flows + c_theta . theta``, which turns the observable's
    response to a contingency dipole into two dot products.
    """

    def __init__(self, grid: Grid, change: TopologyChange, use_dtheta: bool = False):
        m, n = len(grid.branches), len(grid.buses)
        self.c_flow = np.zeros(m)
        self.c_theta = np.zeros(n)
        if isinstance(change, Disconnect):
            if use_dtheta:
                br = grid.branch(change.branch)
                self.c_theta[grid.bus_index(br.from_bus)] = 1.0
                self.c_theta[grid.bus_index(br.to_bus)] = -1.0
            else:
                self.c_flow[grid.branch_index(change.branch)] = 1.0
        elif isinstance(change, Reconnect):
            br = grid.branch(change.branch)
            self.c_theta[grid.bus_index(br.from_bus)] = 1.0
            self.c_theta[grid.bus_index(br.to_bus)] = -1.0
        elif isinstance(change, Split):
            moved = set(change.busbar_2)
            terms = [t for t in grid.terminals_at(change.substation) if t.kind == "branch"]
            inj_moved = Terminal.injection() in moved
            for t in terms:
                on_two = t in moved
                if inj_moved and not on_two:
                    self.c_flow[grid.branch_index(t.branch)] += 1.0 if t.end == "to" else -1.0
                elif not inj_moved and on_two:
                    self.c_flow[grid.branch_index(t.branch)] -= 1.0 if t.end == "to" else -1.0
        elif isinstance(change, Merge):
            primary, secondary = grid.substation(change.substation).buses
            self.c_theta[grid.bus_index(primary)] = 1.0
            self.c_theta[grid.bus_index(secondary)] = -1.0
        else:
            raise TypeError(f"not a topology change: {change!r}")

    def delta(self, dflows: np.ndarray, dtheta: np.ndarray) -> float:
        return float(self.c_flow @ dflows + self.c_theta @ dtheta)


def run_n1(
    grid: Grid,
    action: Sequence[TopologyChange],
    contingencies: Sequence[str] | None = None,
    *,
    jobs: int = 1,
    beta_one_tol: float | None = None,
    solver: DcSolver | None = None,
) -> ScreeningReport:
    """Screen branch outages on top of an action via the superposition path.

    One basis is built for the action; each contingency adds a single
    unitary outage state derived from the reference factorization and is
    solved as an (N+1)-sized system.  Contingencies that would island the
    target are flagged, branches already open in the target are skipped,
    and combinations the unitary basis cannot represent come back
    ``degenerate`` instead of silently wrong.

    ``beta_one_tol`` enables the opt-in independence shortcut: when the
    outage's beta is within the threshold of 1 the post-contingency flows
    are assembled as action flows plus the plain outage update.
    """
    t_start = time.perf_counter()
    action = tuple(action)
    solver = solver if solver is not None else DcSolver(grid)
    basis = build_basis(grid, action, solver=solver)
    system = coefficient_matrix(basis)
    action_solution = solve_betas(system)

    active = system.active
    m_act = system.matrix
    obs_ref = np.array([system.observables[k, 0] for k in active])
    forms = [
        _ObservableForm(grid, basis.changes[k], use_dtheta=k in system.dtheta_rows)
        for k in active
    ]
    f_ref = basis.ref.flows
    if active:
        f_states = np.array([basis.states[k].flows for k in active])
    else:
        f_states = np.zeros((0, len(f_ref)))

    target = apply_change_set(grid, action)
    action_flows = action_solution.alpha * f_ref + (
        np.array([action_solution.betas[k] for k in active]) @ f_states
        if active
        else 0.0
    )
    target_disconnected = np.array([not br.connected for br in target.branches])
    stray = np.abs(action_flows[target_disconnected])
    if stray.size and stray.max() > 1e-6:
        raise SelfCheckFailed(
            f"action superposition leaves flow on a disconnected branch ({stray.max():.3e})"
        )
    action_flows[target_disconnected] = 0.0
    target_bridges = bridge_branches(target)
    ref_bridges = bridge_branches(grid)
    reconnected = {c.branch for c in action if isinstance(c, Reconnect)}

    if contingencies is None:
        contingencies = tuple(br.id for br in target.branches if br.connected)
    else:
        contingencies = tuple(contingencies)

    basis_seconds = time.perf_counter() - t_start
    t_cont = time.perf_counter()

    n_active = len(active)
    betas_action = np.array([action_solution.betas[k] for k in active])

    # One batched triangular solve covers every outage state the screen needs.
    solver.prefetch_dipoles([
        b for b in contingencies
        if target.branch(b).connected
        and b not in target_bridges
        and b not in reconnected
        and b not in ref_bridges
    ])

    def screen_one(branch_id: str) -> ContingencyResult:
        if not target.branch(branch_id).connected:
            return ContingencyResult(branch=branch_id, status=STATUS_SKIPPED)
        if branch_id in target_bridges:
            return ContingencyResult(branch=branch_id, status=STATUS_ISLANDING)

        if branch_id in reconnected:
            # Outage of a branch the action reconnects: the combination is
            # the action without that reconnection.
            keep = [i for i, k in enumerate(active)
                    if not (isinstance(basis.changes[k], Reconnect)
                            and basis.changes[k].branch == branch_id)]
            if len(keep) == n_active:  # the reconnection was pruned as a no-op
                return ContingencyResult(
                    branch=branch_id, status=STATUS_OK,
                    flows=action_flows.copy(), betas=betas_action.copy(),
                )
            sub = m_act[np.ix_(keep, keep)]
            try:
                betas = np.linalg.solve(sub, np.ones(len(keep)))
            except np.linalg.LinAlgError:
                return ContingencyResult(branch=branch_id, status=STATUS_DEGENERATE)
            alpha = 1.0 - betas.sum()
            flows = alpha * f_ref + betas @ f_states[keep]
            flows[target_disconnected] = 0.0
            flows[grid.branch_index(branch_id)] = 0.0
            return ContingencyResult(branch=branch_id, status=STATUS_OK,
                                     flows=flows, betas=betas)

        if branch_id in ref_bridges:
            # Connected in the target thanks to the action, but its unitary
            # outage would island the reference: no basis state exists.
            return ContingencyResult(branch=branch_id, status=STATUS_DEGENERATE)

        o_idx = grid.branch_index(branch_id)
        z = solver.dipole_response(branch_id)
        w = solver._branch_flows(z)
        denom = 1.0 - w[o_idx]
        if abs(denom) < ISLANDING_TOL:
            return ContingencyResult(branch=branch_id, status=STATUS_ISLANDING)
        pf_o = f_ref[o_idx]
        if abs(pf_o) <= OBSERVABLE_TOL:
            # Outage of a branch idle in the reference: a no-op unitary
            # change.  Representable only if it is idle in the target too.
            if abs(action_flows[o_idx]) <= OBSERVABLE_TOL:
                flows = action_flows.copy()
                flows[o_idx] = 0.0
                return ContingencyResult(
                    branch=branch_id, status=STATUS_OK,
                    flows=flows, betas=np.append(betas_action, 0.0),
                )
            return ContingencyResult(branch=branch_id, status=STATUS_DEGENERATE)

        x = pf_o / denom
        aug = np.empty((n_active + 1, n_active + 1))
        aug[:n_active, :n_active] = m_act
        for row, form in enumerate(forms):
            # The outage state zeroes the outaged branch's own flow; its
            # un-zeroed Ohm flow in the dipole model is exactly x, so any
            # observable touching that branch needs the c_flow[o] * x term
            # removed.
            delta = x * (form.delta(w, z) - form.c_flow[o_idx])
            aug[row, n_active] = -delta / obs_ref[row]
        aug[n_active, :n_active] = 1.0 - f_states[:, o_idx] / pf_o
        aug[n_active, n_active] = 1.0
        rhs = np.ones(n_active + 1)
        try:
            betas = np.linalg.solve(aug, rhs)
        except np.linalg.LinAlgError:
            return ContingencyResult(branch=branch_id, status=STATUS_DEGENERATE)
        if (not np.all(np.isfinite(betas))
                or np.max(np.abs(aug @ betas - rhs)) > 1e-8):
            return ContingencyResult(branch=branch_id, status=STATUS_DEGENERATE)
        alpha = 1.0 - betas.sum()
        beta_o = betas[n_active]

        if beta_one_tol is not None and abs(beta_o - 1.0) <= beta_one_tol:
            # Independence shortcut: the outage barely interacts with the
            # action, so reuse the action flows plus the plain outage update.
            # Approximate by construction, so no self-check here.
            flows = action_flows + x * w
        else:
            flows = (alpha + beta_o) * f_ref + betas[:n_active] @ f_states + (beta_o * x) * w
            bad = np.abs(flows[target_disconnected])
            if bad.size and bad.max() > 1e-6:
                raise SelfCheckFailed(
                    f"contingency {branch_id}: superposed flow survives on a "
                    f"target-disconnected branch ({bad.max():.3e})"
                )
        flows[target_disconnected] = 0.0
        flows[o_idx] = 0.0
        return ContingencyResult(branch=branch_id, status=STATUS_OK,
                                 flows=flows, betas=betas)

    results: list[ContingencyResult | None] = [None] * len(contingencies)
    if jobs <= 1 or len(contingencies) < 2:
        for i, branch_id in enumerate(contingencies):
            results[i] = screen_one(branch_id)
    else:
        def worker(span: range) -> None:
            for i in span:
                results[i] = screen_one(contingencies[i])

        chunk = -(-len(contingencies) // jobs)
        spans = [range(s, min(s + chunk, len(contingencies)))
                 for s in range(0, len(contingencies), chunk)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(worker, spans))

    contingency_seconds = time.perf_counter() - t_cont
    final = tuple(results)  # type: ignore[arg-type]
    worst = np.zeros(len(f_ref))
    for res in final:
        if res.ok:
            np.maximum(worst, np.abs(res.flows), out=worst)
    timings = {
        "basis_seconds": basis_seconds,
        "contingency_seconds": contingency_seconds,
        "total_seconds": time.perf_counter() - t_start,
        "per_contingency_seconds": contingency_seconds / max(1, len(contingencies)),
    }
    return ScreeningReport(
        grid=grid,
        action=action,
        contingencies=contingencies,
        results=final,
        branch_ids=tuple(br.id for br in grid.branches),
        worst_abs_flow=worst,
        timings=timings,
        method="ext_st",
    )


def run_n1_oracle(
    grid: Grid,
    action: Sequence[TopologyChange],
    contingencies: Sequence[str] | None = None,
) -> ScreeningReport:
    """Refactorize-per-contingency baseline: full solve of every outage."""
    t_start = time.perf_counter()
    action = tuple(action)
    target = apply_change_set(grid, action)
    target_bridges = bridge_branches(target)
    if contingencies is None:
        contingencies = tuple(br.id for br in target.branches if br.connected)
    else:
        contingencies = tuple(contingencies)
    basis_seconds = time.perf_counter() - t_start

    t_cont = time.perf_counter()
    results = []
    ref_branch_index = {br.id: i for i, br in enumerate(grid.branches)}
    for branch_id in contingencies:
        if not target.branch(branch_id).connected:
            results.append(ContingencyResult(branch=branch_id, status=STATUS_SKIPPED))
            continue
        if branch_id in target_bridges:
            results.append(ContingencyResult(branch=branch_id, status=STATUS_ISLANDING))
            continue
        outage_grid = apply_change_set(target, [Disconnect(branch_id)])
        state = DcSolver(outage_grid).solve()
        flows = np.empty(len(grid.branches))
        for i, br in enumerate(outage_grid.branches):
            flows[ref_branch_index[br.id]] = state.flows[i]
        results.append(
            ContingencyResult(branch=branch_id, status=STATUS_OK, flows=flows)
        )
    contingency_seconds = time.perf_counter() - t_cont

    worst = np.zeros(len(grid.branches))
    for res in results:
        if res.ok:
            np.maximum(worst, np.abs(res.flows), out=worst)
    timings = {
        "basis_seconds": basis_seconds,
        "contingency_seconds": contingency_seconds,
        "total_seconds": time.perf_counter() - t_start,
        "per_contingency_seconds": contingency_seconds / max(1, len(contingencies)),
    }
    return ScreeningReport(
        grid=grid,
        action=action,
        contingencies=contingencies,
        results=tuple(results),
        branch_ids=tuple(br.id for br in grid.branches),
        worst_abs_flow=worst,
        timings=timings,
        method="oracle",
    )


@dataclass(frozen=True)
class N1Comparison:
    """Flow and status agreement between an ST screen and the full baseline."""

    max_abs_diff: float
    mean_abs_diff: float
    status_mismatches: tuple[tuple[str, str, str], ...]
    st_timings: dict[str, float]
    oracle_timings: dict[str, float]


def compare_with_oracle(
    report: ScreeningReport,
    grid: Grid,
    action: Sequence[TopologyChange],
    contingencies: Sequence[str] | None = None,
) -> N1Comparison:
    """Re-screen with the refactorizing baseline and diff against ``report``."""
    oracle = run_n1_oracle(grid, action,
                           contingencies if contingencies is not None else report.contingencies)
    diffs = []
    mismatches = []
    for mine, theirs in zip(report.results, oracle.results):
        if mine.status != theirs.status:
            mismatches.append((mine.branch, mine.status, theirs.status))
            continue
        if mine.ok:
            diffs.append(np.max(np.abs(mine.flows - theirs.flows)))
    return N1Comparison(
        max_abs_diff=float(max(diffs, default=0.0)),
        mean_abs_diff=float(np.mean(diffs)) if diffs else 0.0,
        status_mismatches=tuple(mismatches),
        st_timings=report.timings,
        oracle_timings=oracle.timings,
    )
