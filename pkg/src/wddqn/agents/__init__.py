from .common import AgentConfig, compute_beta, compute_beta_rows, epsilon_at, greedy
from .deep import DqnAgent, WddqnAgent, ddqn_target, dqn_target, select_action, weighted_target
from .tabular import TabularAgent, TabularQ, tabular_update

__all__ = [
    "AgentConfig", "DqnAgent", "TabularAgent", "TabularQ", "WddqnAgent",
    "compute_beta", "compute_beta_rows", "ddqn_target", "dqn_target", "epsilon_at",
    "greedy", "select_action", "tabular_update", "weighted_target",
]
