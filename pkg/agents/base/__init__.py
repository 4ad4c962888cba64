"""
基础Agent模块

提供所有Agent的基础抽象类
"""

from agents.base.base_agent import BaseAgent
from agents.base.base_executor import (
    BaseAgentExecutor,
    EnvSlot,
    StepOutcome,
)

__all__ = [
    "BaseAgent",
    "BaseAgentExecutor",
    "EnvSlot",
    "StepOutcome",
]
