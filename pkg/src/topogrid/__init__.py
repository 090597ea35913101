"""DC power flow under combined grid topology changes, by superposition.

Instead of re-solving the grid for a combination of line disconnections,
reconnections, bus splits and merges, the engine solves one small linear
system over the reference state and one state per unitary change, then
superposes flows.  A full-resolve oracle and an N-1 screening application
sit alongside for verification and benchmarking.
"""

from .case_io import (
    Scenario,
    bundled_case,
    bundled_case_path,
    load_case,
    load_scenario,
    parse_matpower,
    write_matpower,
)
from .dc_core import (
    DcSolver,
    IslandingOutage,
    LodfRow,
    SingularSystem,
    SolvedState,
    build_bbus,
    lodf,
    solve_dc,
    verify_cancelling_flow_model,
)
from .ext_st import (
    BetaSolution,
    CancellingFlow,
    DegenerateObservable,
    SelfCheckFailed,
    SingularMatrix,
    StBasis,
    build_basis,
    cancelling_flow,
    coefficient_matrix,
    merge_delta_theta,
    solve_betas,
    split_residual_flow,
    superpose,
    superpose_change_set,
)
from .grid_model import (
    Branch,
    Bus,
    ChangeInapplicable,
    Disconnect,
    Grid,
    GridDisconnected,
    Merge,
    Reconnect,
    Split,
    Substation,
    Terminal,
    TopologyChange,
    apply_change_set,
    bridge_branches,
    change_label,
    connected_components,
)
from .security_analysis import (
    ContingencyResult,
    ScreeningReport,
    compare_with_oracle,
    run_n1,
    run_n1_oracle,
)

__version__ = "0.1.0"
