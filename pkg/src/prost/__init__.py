"""Forecast-then-optimize agents for tabular MDPs that drift with wall-clock time."""

from .nonstat_env import MdpSnapshot, EnvDefinition, snapshot_at, sine_chain, goal_reacher
from .forecaster import VisitStats, ForecastedMdp, forecast_sw_lse, w_lse_forecast
from .planner import SoftmaxPolicy, optimize_future_policy
from .tempo import HyperParams, TempoPlan, make_plan
from .regret_bounds import regret_bound, dynamic_regret
from .harness import RunConfig, run_prost_t, run_baseline

__version__ = "0.1.0"
