"""
EVA Agent Executor

把 act 时计算的嵌入附加到转移上，避免在 observe 时重复前向
"""

import logging

import numpy as np

from agents.base import BaseAgentExecutor, EnvSlot
from agents.eva.eva_agent import EVAAgent
from core.config import AgentConfigModel
from core.replay_memory import Transition
from envs.coin_grid import CoinGridEnv


logger = logging.getLogger(__name__)


class EVAAgentExecutor(BaseAgentExecutor):
    """
    EVA Agent的执行器

    使用示例:
        executor = EVAAgentExecutor(agent, [env])
        executor.tick()
    """

    def __init__(self, agent: EVAAgent, envs: list[CoinGridEnv]):
        """
        初始化EVA Agent Executor

        Args:
            agent: EVAAgent实例
            envs: 锁步推进的环境列表
        """
        super().__init__(agent, envs)

    def build_transition(
        self,
        index: int,
        slot: EnvSlot,
        action: int,
        reward: float,
        next_obs: np.ndarray,
        terminal: bool,
    ) -> Transition:
        """附加本步 act 时得到的嵌入 h_t"""
        transition = super().build_transition(index, slot, action, reward, next_obs, terminal)
        embeddings = self.agent.last_embeddings
        if embeddings is not None:
            transition.embedding = np.asarray(embeddings[index], dtype=np.float32).copy()
        return transition

    def freeze(self) -> None:
        """冻结权重（评估模式）：不再训练，探索率改用 eval_epsilon"""
        self.agent.training = False
        logger.info(f"Agent '{self.agent.name}' frozen for evaluation")


def create_eva_executor(
    config: AgentConfigModel,
    envs: list[CoinGridEnv],
    seed: int | np.random.SeedSequence = 0,
    name: str = "EVAAgent",
) -> EVAAgentExecutor:
    """
    创建EVA Agent Executor的便捷函数

    Args:
        config: Agent配置
        envs: 环境列表（观测维度与动作数取自第一个环境）
        seed: Agent随机种子
        name: Agent名称

    Returns:
        EVAAgentExecutor实例
    """
    if not envs:
        raise ValueError("at least one environment is required")
    agent = EVAAgent(
        config=config,
        obs_dim=envs[0].obs_dim,
        n_actions=envs[0].n_actions,
        seed=seed,
        name=name,
    )
    return EVAAgentExecutor(agent, envs)
