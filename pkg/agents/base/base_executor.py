"""
基础Executor抽象类

连接BaseAgent和环境的桥梁：并行环境按锁步推进，每一步先批量决策再逐个回传经验
"""

import logging
from abc import ABC
from dataclasses import dataclass
from typing import Any

import numpy as np

from agents.base.base_agent import BaseAgent
from core.replay_memory import Transition
from envs.coin_grid import CoinGridEnv


logger = logging.getLogger(__name__)


@dataclass
class EnvSlot:
    """一个环境实例及其当前回合信息"""
    env: CoinGridEnv
    obs: np.ndarray | None = None
    episode_id: int = -1
    step_index: int = 0
    episode_return: float = 0.0


@dataclass
class StepOutcome:
    """一个环境一步的结果"""
    slot: int
    transition: Transition
    done: bool
    episode_return: float | None = None  # 回合结束时为该回合总回报


class BaseAgentExecutor(ABC):
    """
    Agent Executor基类

    持有一个Agent和若干环境，负责回合编号、转移构建和回合结束通知

    使用示例:
        class MyAgentExecutor(BaseAgentExecutor):
            def __init__(self, envs):
                agent = MyAgent()
                super().__init__(agent, envs)
    """

    def __init__(self, agent: BaseAgent, envs: list[CoinGridEnv]):
        """
        初始化Executor

        Args:
            agent: BaseAgent实例
            envs: 环境列表（至少一个）
        """
        if not envs:
            raise ValueError("executor needs at least one environment")
        self.agent = agent
        self.slots = [EnvSlot(env=env) for env in envs]
        self.next_episode_id = 0
        self.started = False

    def _begin_episode(self, slot: EnvSlot) -> None:
        slot.obs = slot.env.reset()
        slot.episode_id = self.next_episode_id
        slot.step_index = 0
        slot.episode_return = 0.0
        self.next_episode_id += 1

    def start(self) -> None:
        """为所有环境开始第一个回合"""
        for slot in self.slots:
            self._begin_episode(slot)
        self.started = True
        logger.info(f"Agent '{self.agent.name}' started on {len(self.slots)} environment(s)")

    def tick(self, epsilon: float | None = None) -> list[StepOutcome]:
        """
        所有环境锁步推进一步

        Args:
            epsilon: 探索率（None 表示使用Agent自身的调度）

        Returns:
            每个环境的结果
        """
        if not self.started:
            self.start()

        observations = np.stack([slot.obs for slot in self.slots])
        actions = self.agent.act_batch(observations, epsilon)

        outcomes = []
        for i, (slot, action) in enumerate(zip(self.slots, actions)):
            next_obs, reward, done = slot.env.step(action)
            transition = self.build_transition(i, slot, int(action), float(reward), next_obs, slot.env.terminated)
            self.agent.observe(transition)

            slot.episode_return += float(reward)
            slot.step_index += 1
            outcome = StepOutcome(slot=i, transition=transition, done=done)
            if done:
                outcome.episode_return = slot.episode_return
                self.on_episode_end(slot)
                self._begin_episode(slot)
            else:
                slot.obs = next_obs
            outcomes.append(outcome)
        return outcomes

    def run_episodes(self, episodes: int, epsilon: float | None = None) -> list[float]:
        """
        推进直到完成指定数量的回合

        Returns:
            按完成顺序排列的回合回报
        """
        returns: list[float] = []
        while len(returns) < episodes:
            for outcome in self.tick(epsilon):
                if outcome.episode_return is not None and len(returns) < episodes:
                    returns.append(outcome.episode_return)
        return returns

    def build_transition(
        self,
        index: int,
        slot: EnvSlot,
        action: int,
        reward: float,
        next_obs: np.ndarray,
        terminal: bool,
    ) -> Transition:
        """
        构建交给Agent的转移

        子类可以重写此方法来附加额外信息（例如嵌入）

        Args:
            index: 环境编号
            slot: 环境槽位（step 之前的回合信息）
            action: 执行的动作
            reward: 奖励
            next_obs: 后继观测
            terminal: 是否为真正的终止（步数截断不算）
        """
        return Transition(
            obs=slot.obs,
            action=action,
            reward=reward,
            next_obs=next_obs,
            episode_id=slot.episode_id,
            step_index=slot.step_index,
            terminal=terminal,
        )

    def on_episode_end(self, slot: EnvSlot) -> None:
        """
        回合结束（可选重写）

        默认把回合回报通知Agent
        """
        self.agent.end_episode(slot.episode_return)

    # ------------------------------------------------------------------
    # 检查点
    # ------------------------------------------------------------------

    def get_state(self) -> dict[str, Any]:
        """导出环境与回合状态"""
        return {
            "next_episode_id": self.next_episode_id,
            "started": self.started,
            "slots": [
                {
                    "env": slot.env.get_state(),
                    "episode_id": slot.episode_id,
                    "step_index": slot.step_index,
                    "episode_return": slot.episode_return,
                }
                for slot in self.slots
            ],
        }

    def set_state(self, data: dict[str, Any]) -> None:
        """恢复 get_state() 导出的状态"""
        if len(data["slots"]) != len(self.slots):
            raise ValueError(f"state holds {len(data['slots'])} environments, executor has {len(self.slots)}")
        self.next_episode_id = int(data["next_episode_id"])
        self.started = bool(data["started"])
        for slot, saved in zip(self.slots, data["slots"]):
            slot.env.set_state(saved["env"])
            slot.episode_id = int(saved["episode_id"])
            slot.step_index = int(saved["step_index"])
            slot.episode_return = float(saved["episode_return"])
            slot.obs = slot.env.observe() if slot.env.state is not None else None
