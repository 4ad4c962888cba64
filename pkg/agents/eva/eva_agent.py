"""
EVA Agent实现

DQN 学习器 + 决策时值调整：
- ε-greedy 作用在混合值 Q_EVA 上，Q_NP 来自值缓冲区的近邻估计
- 每一步写入回放缓冲区；热身结束后每 insert_period 步检索近邻轨迹做 trace computation，
  结果写入值缓冲区
- 训练与目标网络同步按各自的周期进行
- λ 可以线性退火到基线值（巩固实验）

混合方向：
    nonparametric（默认）: Q_EVA = (1-λ)·Q_θ + λ·Q_NP，λ=0 即 DQN 基线
    parametric:            Q_EVA = λ·Q_θ + (1-λ)·Q_NP，λ=1 即 DQN 基线
处于基线设置时不查询值缓冲区，也不做规划，动作流与纯 DQN 完全一致。
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from agents.base import BaseAgent
from core.approximator import AdamOptimizer, MlpQFunction, TrainBatch, sync_target, train_step
from core.checkpoint import CheckpointData
from core.config import AgentConfigModel, MixingConvention
from core.replay_memory import ReplayMemory, Transition
from core.trace_computation import KernelParams, compute_traces
from core.value_buffer import ValueBuffer


logger = logging.getLogger(__name__)


@dataclass
class AgentStats:
    """Agent计数器（单调递增）"""
    env_steps: int = 0
    train_steps: int = 0
    planning_calls: int = 0
    value_buffer_insertions: int = 0
    value_buffer_queries: int = 0
    value_buffer_hits: int = 0
    target_syncs: int = 0
    episodes: int = 0
    last_loss: float | None = None
    episode_returns: list[float] = field(default_factory=list)

    @property
    def hit_rate(self) -> float:
        """值缓冲区查询中得到估计的比例"""
        if self.value_buffer_queries == 0:
            return 0.0
        return self.value_buffer_hits / self.value_buffer_queries

    def recent_mean_return(self, window: int = 100) -> float | None:
        """最近 window 个回合的平均回报"""
        if not self.episode_returns:
            return None
        recent = self.episode_returns[-window:]
        return float(np.mean(recent))


def mix_values(
    q_theta: np.ndarray,
    q_np: np.ndarray | None,
    mixing_lambda: float,
    convention: str = MixingConvention.NONPARAMETRIC.value,
) -> np.ndarray:
    """
    按混合方向计算 Q_EVA

    q_np 为 None 时原样返回 Q_θ
    """
    if q_np is None:
        return q_theta
    if convention == MixingConvention.PARAMETRIC.value:
        return mixing_lambda * q_theta + (1.0 - mixing_lambda) * q_np
    return (1.0 - mixing_lambda) * q_theta + mixing_lambda * q_np


class EVAAgent(BaseAgent):
    """
    EVA Agent

    使用示例:
        agent = EVAAgent(config.get_agent_config(), obs_dim=195, n_actions=4, seed=0)
        action = agent.act(obs)
        agent.observe(transition)
    """

    def __init__(
        self,
        config: AgentConfigModel,
        obs_dim: int,
        n_actions: int,
        seed: int | np.random.SeedSequence = 0,
        name: str = "EVAAgent",
    ):
        """
        初始化EVA Agent

        Args:
            config: Agent配置
            obs_dim: 展平后的观测维度
            n_actions: 动作数
            seed: 随机种子（网络初始化、探索、回放采样各用一个子序列）
            name: Agent名称
        """
        super().__init__(name)
        self.config = config
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)

        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_seq, explore_seq, replay_seq = seq.spawn(3)
        self.explore_rng = np.random.default_rng(explore_seq)
        self.replay_rng = np.random.default_rng(replay_seq)

        layer_sizes = [
            self.obs_dim,
            *config.number_of_fully_connected_activations,
            config.embedding_dim,
            self.n_actions,
        ]
        self.online = MlpQFunction(layer_sizes, rng=np.random.default_rng(init_seq))
        self.target = self.online.copy()
        self.optimizer = AdamOptimizer(
            self.online.parameters(),
            learning_rate=config.learning_rate,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            epsilon=config.adam_epsilon,
        )
        self.replay = ReplayMemory(
            capacity=config.replay_buffer_capacity,
            obs_dim=self.obs_dim,
            embedding_dim=config.embedding_dim,
            n_actions=self.n_actions,
        )
        self.value_buffer = ValueBuffer(
            capacity=config.value_buffer_size,
            embedding_dim=config.embedding_dim,
            n_actions=self.n_actions,
        )
        self.kernel_params = KernelParams(**config.kernel.model_dump())

        self.stats = AgentStats()
        self.training = True
        self.mixing_lambda = float(config.mixing_lambda)
        self._anneal: dict[str, float] | None = None
        self.last_embeddings: np.ndarray | None = None

        if config.lambda_anneal_steps is not None:
            self.set_lambda_schedule(config.lambda_anneal_steps)

        logger.info(
            f"Created {self.name}: layers={layer_sizes}, trace_mode={config.trace_mode}, "
            f"lambda={self.mixing_lambda} ({config.mixing_convention})"
        )

    # ------------------------------------------------------------------
    # 混合与探索
    # ------------------------------------------------------------------

    @property
    def baseline_lambda(self) -> float:
        """使 Q_EVA = Q_θ 的 λ 取值"""
        return 1.0 if self.config.mixing_convention == MixingConvention.PARAMETRIC.value else 0.0

    @property
    def uses_value_buffer(self) -> bool:
        """当前 λ 是否让 Q_NP 参与决策"""
        return self.config.planning_enabled and self.mixing_lambda != self.baseline_lambda

    def epsilon(self) -> float:
        """当前探索率：训练时按热身期线性衰减，冻结时用 eval_epsilon"""
        cfg = self.config
        if not self.training:
            return cfg.eval_epsilon
        horizon = cfg.epsilon_horizon
        if horizon <= 0:
            return cfg.epsilon_end
        frac = min(1.0, self.stats.env_steps / horizon)
        return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)

    def q_eva(self, q_theta: np.ndarray, embedding: np.ndarray) -> np.ndarray:
        """当前状态的混合值"""
        if not self.uses_value_buffer:
            return q_theta
        q_np = self.value_buffer.estimate(
            embedding,
            k=self.config.value_neighbours,
            temperature=self.config.temperature,
        )
        self.stats.value_buffer_queries += 1
        if q_np is None:
            return q_theta
        self.stats.value_buffer_hits += 1
        return mix_values(q_theta, q_np, self.mixing_lambda, self.config.mixing_convention)

    def act(self, obs: np.ndarray, epsilon: float | None = None) -> int:
        return self.act_batch(np.asarray(obs)[None, :], epsilon)[0]

    def act_batch(self, observations: np.ndarray, epsilon: float | None = None) -> list[int]:
        """
        一次前向为全部并行环境选动作

        嵌入缓存在 last_embeddings，供执行器构建转移
        """
        eps = self.epsilon() if epsilon is None else float(epsilon)
        q_theta, embeddings = self.online.q_and_embedding(np.asarray(observations))
        self.last_embeddings = embeddings

        actions = []
        for q, h in zip(q_theta, embeddings):
            q_mix = self.q_eva(np.asarray(q, dtype=np.float64), h)
            if self.explore_rng.random() < eps:
                actions.append(int(self.explore_rng.integers(self.n_actions)))
            else:
                # argmax 平局取最小动作编号
                actions.append(int(np.argmax(q_mix)))
        return actions

    # ------------------------------------------------------------------
    # 学习
    # ------------------------------------------------------------------

    def _past_warmup(self) -> int | None:
        """热身后的步数（未过热身返回 None）"""
        elapsed = self.stats.env_steps - self.config.no_training_period
        return elapsed if elapsed > 0 else None

    def observe(self, transition: Transition) -> None:
        """
        写入回放缓冲区，并按周期触发规划、训练与目标同步
        """
        if transition.embedding is None:
            transition.embedding = self.online.embedding(transition.obs)
        self.replay.append(transition)
        self.stats.env_steps += 1
        self._update_lambda()

        elapsed = self._past_warmup()
        if elapsed is None:
            return

        if elapsed % self.config.insert_period == 0 and self._planning_due():
            self.plan(transition.embedding)

        if self.training and elapsed % self.config.train_period == 0:
            self._train()

    def _planning_due(self) -> bool:
        if not self.uses_value_buffer:
            return False
        if self.config.eva_after_buffer_full and not self.replay.is_full:
            return False
        return True

    def _train(self) -> None:
        batch = TrainBatch.from_dict(self.replay.sample(self.config.training_batch_size, self.replay_rng))
        loss = train_step(self.online, self.target, batch, self.config.gamma, self.optimizer)
        self.stats.train_steps += 1
        self.stats.last_loss = loss
        if self.stats.train_steps % self.config.target_network_period == 0:
            sync_target(self.online, self.target)
            self.stats.target_syncs += 1

    def plan(self, h: np.ndarray) -> int:
        """
        检索 M 条近邻轨迹，做 trace computation，把每一步的 (嵌入, Q_NP) 写入值缓冲区

        Returns:
            写入值缓冲区的条目数（缓冲区为空时为 0）
        """
        if len(self.replay) == 0:
            return 0
        cfg = self.config
        slices = self.replay.knn_trajectories(h, cfg.planning_neighbours, cfg.rollout_length)
        q_function = self.target if (cfg.trace_mode == "kbrl" and cfg.kbrl_use_target_network) else self.online
        tables = compute_traces(cfg.trace_mode, slices, q_function, cfg.gamma, self.kernel_params)

        inserted = 0
        for traj, table in zip([s for s in slices if len(s)], tables):
            self.value_buffer.insert_many(traj.embeddings, table.q)
            inserted += len(traj)
        self.stats.planning_calls += 1
        self.stats.value_buffer_insertions += inserted
        logger.debug(f"Planning call {self.stats.planning_calls}: {len(slices)} trajectories, {inserted} entries")
        return inserted

    def end_episode(self, episode_return: float) -> None:
        self.stats.episodes += 1
        self.stats.episode_returns.append(float(episode_return))

    # ------------------------------------------------------------------
    # λ 调度
    # ------------------------------------------------------------------

    def set_lambda(self, value: float) -> None:
        """直接设置 λ（取消正在进行的退火）"""
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {value}")
        self.mixing_lambda = float(value)
        self._anneal = None

    def set_lambda_schedule(self, horizon_steps: int) -> None:
        """
        λ 从当前值线性退火到基线值，历时 horizon_steps 个环境步

        horizon 为 0 时立即到达基线值
        """
        if horizon_steps < 0:
            raise ValueError(f"horizon must be >= 0, got {horizon_steps}")
        if horizon_steps == 0:
            self.set_lambda(self.baseline_lambda)
            return
        self._anneal = {
            "start_lambda": self.mixing_lambda,
            "start_step": self.stats.env_steps,
            "horizon": int(horizon_steps),
        }
        logger.info(f"Annealing lambda {self.mixing_lambda} -> {self.baseline_lambda} over {horizon_steps} steps")

    def _update_lambda(self) -> None:
        if self._anneal is None:
            return
        frac = min(1.0, (self.stats.env_steps - self._anneal["start_step"]) / self._anneal["horizon"])
        start = self._anneal["start_lambda"]
        self.mixing_lambda = start + frac * (self.baseline_lambda - start)
        if frac >= 1.0:
            self.mixing_lambda = self.baseline_lambda
            self._anneal = None

    # ------------------------------------------------------------------
    # 检查点
    # ------------------------------------------------------------------

    def to_checkpoint(
        self,
        config: dict[str, Any],
        include_value_buffer: bool = False,
        executor_state: dict[str, Any] | None = None,
    ) -> CheckpointData:
        """导出检查点内容"""
        stats = asdict(self.stats)
        stats.update({
            "mixing_lambda": self.mixing_lambda,
            "anneal": self._anneal,
            "training": self.training,
        })
        return CheckpointData(
            config=config,
            network=[p.copy() for p in self.online.parameters()],
            target_network=[p.copy() for p in self.target.parameters()],
            optimizer_step=self.optimizer.t,
            optimizer_arrays=[a.copy() for a in self.optimizer.state_arrays()],
            replay_meta=self.replay.state_meta(),
            replay_arrays=self.replay.state_arrays(),
            rng_states={
                "explore": self.explore_rng.bit_generator.state,
                "replay": self.replay_rng.bit_generator.state,
            },
            stats=stats,
            value_buffer_meta=self.value_buffer.state_meta() if include_value_buffer else None,
            value_buffer_arrays=self.value_buffer.state_arrays() if include_value_buffer else None,
            executor_state=executor_state,
            extra={"layer_sizes": list(self.online.architecture)},
        )

    @classmethod
    def from_checkpoint(cls, data: CheckpointData, config: AgentConfigModel, name: str = "EVAAgent") -> "EVAAgent":
        """
        从检查点内容重建Agent

        Args:
            data: checkpoint_load 的结果
            config: Agent配置（通常由 data.config 解析得到）
        """
        meta = data.replay_meta
        agent = cls(config, obs_dim=meta["obs_dim"], n_actions=meta["n_actions"], name=name)
        agent.online.set_parameters(data.network)
        agent.target.set_parameters(data.target_network)
        agent.optimizer.load_state(data.optimizer_step, data.optimizer_arrays)
        agent.replay = ReplayMemory.from_state(meta, data.replay_arrays)
        if data.value_buffer_meta is not None:
            agent.value_buffer = ValueBuffer.from_state(data.value_buffer_meta, data.value_buffer_arrays)
        agent.explore_rng.bit_generator.state = data.rng_states["explore"]
        agent.replay_rng.bit_generator.state = data.rng_states["replay"]

        stats = dict(data.stats)
        agent.mixing_lambda = float(stats.pop("mixing_lambda"))
        agent._anneal = stats.pop("anneal")
        agent.training = bool(stats.pop("training"))
        agent.stats = AgentStats(**stats)
        return agent
