import numpy as np
import pytest

from agents.base import BaseAgent, BaseAgentExecutor
from agents.eva import EVAAgentExecutor, create_eva_executor
from envs import CoinGridEnv


class CountingAgent(BaseAgent):
    """总是向右走，记录收到的转移"""

    def __init__(self):
        super().__init__()
        self.transitions = []
        self.returns = []

    def act(self, obs, epsilon=None) -> int:
        return 1

    def observe(self, transition) -> None:
        self.transitions.append(transition)

    def end_episode(self, episode_return: float) -> None:
        self.returns.append(episode_return)


def _envs(count: int, seed: int = 0, max_episode_steps: int = 60) -> list[CoinGridEnv]:
    return [CoinGridEnv(max_episode_steps=max_episode_steps, seed=seed + i) for i in range(count)]


def test_executor_requires_an_environment():
    with pytest.raises(ValueError):
        BaseAgentExecutor(CountingAgent(), [])


def test_transitions_carry_episode_bookkeeping():
    agent = CountingAgent()
    executor = BaseAgentExecutor(agent, _envs(1, max_episode_steps=5))
    for _ in range(12):
        executor.tick()
    first = agent.transitions[0]
    assert (first.episode_id, first.step_index) == (0, 0)
    for prev, cur in zip(agent.transitions, agent.transitions[1:]):
        if cur.episode_id == prev.episode_id:
            assert cur.step_index == prev.step_index + 1
            np.testing.assert_array_equal(cur.obs, prev.next_obs)
        else:
            assert cur.episode_id == prev.episode_id + 1
            assert cur.step_index == 0
    assert max(t.step_index for t in agent.transitions) <= 4
    assert agent.transitions[-1].episode_id >= 2


def test_run_episodes_returns_episode_returns():
    agent = CountingAgent()
    executor = BaseAgentExecutor(agent, _envs(3, max_episode_steps=8))
    returns = executor.run_episodes(5)
    assert len(returns) == 5
    assert all(r <= 1.0 for r in returns)
    assert len(agent.returns) >= 5
    ids = {t.episode_id for t in agent.transitions}
    assert len(ids) >= 5


def test_truncated_episode_is_not_terminal():
    agent = CountingAgent()
    env = CoinGridEnv(max_episode_steps=3, seed=0)
    executor = BaseAgentExecutor(agent, [env])
    executor.start()
    env.set_state({
        "state": {"agent_pos": [0, 12], "coin_positions": [[4, 0]], "steps_elapsed": 0},
        "done": False, "terminated": False, "rng": env.rng.bit_generator.state,
    })
    executor.slots[0].obs = env.observe()
    outcomes = [executor.tick()[0] for _ in range(3)]
    assert outcomes[-1].done
    assert outcomes[-1].episode_return == pytest.approx(-0.03)
    assert not any(o.transition.terminal for o in outcomes)


def test_eva_executor_attaches_act_embeddings(smoke_agent_config):
    executor = create_eva_executor(smoke_agent_config, _envs(2), seed=0)
    assert isinstance(executor, EVAAgentExecutor)
    executor.start()
    observations = [slot.obs.copy() for slot in executor.slots]
    outcomes = executor.tick()
    for obs, outcome in zip(observations, outcomes):
        np.testing.assert_array_equal(outcome.transition.obs, obs)
        np.testing.assert_allclose(outcome.transition.embedding, executor.agent.online.embedding(obs), rtol=1e-5, atol=1e-6)
    assert executor.agent.stats.env_steps == 2


def test_freeze_switches_to_evaluation(smoke_agent_config):
    executor = create_eva_executor(smoke_agent_config, _envs(1), seed=0)
    executor.freeze()
    assert executor.agent.training is False
    assert executor.agent.epsilon() == smoke_agent_config.eval_epsilon


def test_state_round_trip_resumes_identically():
    a = BaseAgentExecutor(CountingAgent(), _envs(2, seed=7, max_episode_steps=6))
    for _ in range(9):
        a.tick()
    state = a.get_state()

    b = BaseAgentExecutor(CountingAgent(), _envs(2, seed=100, max_episode_steps=6))
    b.set_state(state)
    for _ in range(10):
        oa, ob = a.tick(), b.tick()
        for x, y in zip(oa, ob):
            np.testing.assert_array_equal(x.transition.next_obs, y.transition.next_obs)
            assert (x.transition.episode_id, x.transition.step_index) == (y.transition.episode_id, y.transition.step_index)
            assert x.episode_return == y.episode_return

    with pytest.raises(ValueError):
        BaseAgentExecutor(CountingAgent(), _envs(1)).set_state(state)
