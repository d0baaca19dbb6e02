"""Constraint-aware donor-session invitation planning.

Feasible-pair generation under medical, geographic, and temporal rules;
quantile demand targeting net of forecast organic supply; plan construction
by a scarcity-driven greedy heuristic or an exact branch-and-bound solver;
independent plan validation; and a rolling-window planning pipeline.
"""

from .bilp import (
    BilpModel,
    Constraint,
    ModelConfig,
    ParsedMps,
    VariableRef,
    VarKind,
    assign_var,
    build_model,
    evaluate_objective,
    export_mps,
    invite_var,
    parse_mps,
    slack_var,
)
from .branch_bound import SolveLimits, SolveResult, solve_exact
from .datagen import GenSpec, donor_postal_codes, generate
from .demand import (
    Component,
    DemandPanel,
    DemandTarget,
    QuantileConfig,
    carry_forward_target,
    donation_equivalent,
    quantile_target,
    residual_demand,
)
from .eligibility import (
    EligibilityConfig,
    FeasiblePair,
    build_feasible_pairs,
    static_checks,
)
from .errors import (
    DegenerateFitError,
    DonorPlanError,
    IngestionError,
    InsufficientDataError,
    InvalidInputError,
    MissingAnchorError,
    ModelConstructionError,
    StructuralError,
)
from .forecast import (
    FIRST_TIME_GROUP_SHARES,
    BacktestReport,
    ConstantProbabilityProvider,
    HistoricalShareProvider,
    HWParams,
    MonthlySeries,
    OrganicSupplyEstimate,
    allocate_by_blood_shares,
    backtest_loyo,
    holt_winters_additive,
    select_hw_params,
    ols_trend_seasonal,
    organic_estimate,
    same_month_mean,
    seasonal_naive,
)
from .geo import GeoPoint, PostalCodeTable, donor_session_distance, haversine_km
from .greedy import greedy_assign, scarcity_order
from .model import (
    BloodGroup,
    DateInterval,
    Donor,
    PlanningMonth,
    Registry,
    SessionWindow,
    Sex,
    age_at,
    annual_limit,
    donations_in_year_before,
    is_high_frequency,
)
from .pipeline import (
    ScenarioResult,
    WindowConfig,
    WindowResult,
    first_time_forecast,
    horizon_months,
    merge_window_plans,
    observed_supply,
    retrospective_complement,
    revalidate_horizon,
    run_horizon,
    run_window,
    window_config_from_dict,
    window_config_to_dict,
    window_targets,
)
from .plan_eval import (
    InvitationPlan,
    PlanEntry,
    PlanMetrics,
    Violation,
    assemble_plan,
    earliest_feasible_date,
    objective_breakdown,
    plan_to_assignment,
    compute_metrics,
    validate_plan,
)

__version__ = "0.1.0"
