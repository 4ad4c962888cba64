"""
EVA Agent模块

DQN + 基于回放轨迹的决策时值调整
"""

from agents.eva.eva_agent import AgentStats, EVAAgent, mix_values
from agents.eva.eva_executor import EVAAgentExecutor, create_eva_executor

__all__ = [
    "AgentStats",
    "EVAAgent",
    "mix_values",
    "EVAAgentExecutor",
    "create_eva_executor",
]
