"""公共夹具与小型构造函数"""

import numpy as np
import pytest

from core.approximator import TabularQFunction
from core.config import AgentConfigModel, AppConfigModel, ConfigManager
from core.replay_memory import ReplayMemory, Transition


def make_transition(
    obs,
    action: int,
    reward: float,
    next_obs,
    episode_id: int = 0,
    step_index: int = 0,
    terminal: bool = False,
    embedding=None,
) -> Transition:
    obs = np.atleast_1d(np.asarray(obs, dtype=np.float32))
    next_obs = np.atleast_1d(np.asarray(next_obs, dtype=np.float32))
    return Transition(
        obs=obs,
        action=action,
        reward=reward,
        next_obs=next_obs,
        episode_id=episode_id,
        step_index=step_index,
        terminal=terminal,
        embedding=embedding,
    )


def fill_episode(
    memory: ReplayMemory,
    q_function: TabularQFunction,
    states: list[int],
    actions: list[int],
    rewards: list[float],
    episode_id: int = 0,
    terminal: bool = True,
) -> list[int]:
    """
    把一条表格MDP轨迹写入回放缓冲区

    states 比 actions 多一个元素（最后一个是后继状态）；返回写入的槽位
    """
    slots = []
    for t, (a, r) in enumerate(zip(actions, rewards)):
        s, s_next = states[t], states[t + 1]
        slots.append(memory.append(make_transition(
            obs=[s],
            action=a,
            reward=r,
            next_obs=[s_next],
            episode_id=episode_id,
            step_index=t,
            terminal=terminal and t == len(actions) - 1,
            embedding=q_function.embedding([s]),
        )))
    return slots


@pytest.fixture
def smoke_config() -> AppConfigModel:
    """极小规模的完整配置"""
    return ConfigManager.from_preset("smoke").app_config


@pytest.fixture
def smoke_agent_config(smoke_config) -> AgentConfigModel:
    return smoke_config.agent


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
