"""Price-modification attack simulator for composed grid/microgrid networks.

The package models a transmission grid with attached microgrids under
linearized power flow, propagates line overloads as cascades, and
plans two-stage attacks (island a microgrid, then break it from
inside) driven by demand-response price manipulation under a budget.
"""

from .cascade import CascadeError, CascadeOutcome, CascadeStepRecord, run_cascade
from .cases import builtin_names, load_case
from .experiments import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    assign_capacities,
    build_experiment,
    load_config,
    run_point,
    run_sweep,
    scale_microgrid_load,
)
from .model import (
    Branch,
    Bus,
    CaseError,
    CaseFormatError,
    CaseValidationError,
    ComposedGrid,
    Generator,
    GridCase,
    MicrogridSpec,
    compose,
    islands,
    parse_case,
    serialize_case,
)
from .planner import (
    BudgetError,
    BudgetLedger,
    CriticalNode,
    GenPriceAttack,
    PlanResult,
    PlanState,
    TraceEntry,
    bl,
    bm,
    critical_nodes,
    im,
    islanding_potential,
    pma,
    random_baseline,
)
from .powerflow import (
    FlowOperator,
    FlowSolution,
    Injection,
    IslandBalance,
    PowerFlowError,
    SensitivityMatrix,
    balance,
    flow_operator,
    kirchhoff_residual,
    angle_residual,
    sensitivities,
    solve_balanced,
    solve_dc,
)
from .pricing import (
    AttackVector,
    McbResult,
    Tariff,
    TariffEntry,
    attack_cost,
    demand_response,
    effective_demands,
    mcb,
)

__version__ = "0.1.0"
