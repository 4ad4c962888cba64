"""
基础Agent抽象类

所有强化学习Agent的决策/学习逻辑基类
"""

from abc import ABC, abstractmethod

import numpy as np

from core.replay_memory import Transition


class BaseAgent(ABC):
    """
    Agent业务逻辑基类

    所有Agent都应继承此类并实现 act / observe

    使用示例:
        class RandomAgent(BaseAgent):
            def act(self, obs, epsilon=None) -> int:
                return int(self.rng.integers(4))

            def observe(self, transition: Transition) -> None:
                pass
    """

    def __init__(self, name: str | None = None):
        """
        初始化Agent

        Args:
            name: Agent名称（可选）
        """
        self.name = name or self.__class__.__name__

    @abstractmethod
    def act(self, obs: np.ndarray, epsilon: float | None = None) -> int:
        """
        为单个观测选择动作

        Args:
            obs: 观测
            epsilon: 探索率（None 表示使用Agent自身的调度）

        Returns:
            动作编号
        """
        pass

    def act_batch(self, observations: np.ndarray, epsilon: float | None = None) -> list[int]:
        """为一批并行环境的观测选择动作（默认逐个调用 act）"""
        return [self.act(obs, epsilon) for obs in observations]

    @abstractmethod
    def observe(self, transition: Transition) -> None:
        """
        接收环境对上一次动作的响应

        Args:
            transition: 一步经验
        """
        pass

    def end_episode(self, episode_return: float) -> None:
        """
        回合结束通知（可选重写）

        Args:
            episode_return: 该回合的总回报
        """
        pass

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(name={self.name})"
