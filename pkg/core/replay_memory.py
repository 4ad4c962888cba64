"""
带轨迹信息的回放缓冲区

功能：
- 固定容量的环形缓冲区（严格按槽位FIFO淘汰）
- 记录同一回合内的后继链接，可按链接抽取轨迹片段
- 每个转移的嵌入同时写入 NNIndex，支持按嵌入检索近邻轨迹
- 为 DQN 训练均匀采样批次

嵌入只在写入时记录一次，之后不随网络更新刷新。
并发约定：单写者多读者；append 与 knn_trajectories 不可并发调用。
"""

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from core.errors import DeadSlotError, DimensionError
from core.nn_index import NNIndex


logger = logging.getLogger(__name__)


@dataclass
class Transition:
    """
    一步经验

    embedding 为 None 时由 Agent 在写入前补齐
    """
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    episode_id: int
    step_index: int
    terminal: bool = False
    embedding: np.ndarray | None = None


@dataclass
class TrajectorySlice:
    """
    从回放缓冲区抽取的一段连续转移

    各数组第一维等长，对应片段内的每一步。
    truncated=True 表示片段因长度上限或后继缺失而截断（末端需要参数化自举），
    False 表示片段以终止转移结束。
    """
    slots: np.ndarray
    observations: np.ndarray
    next_observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    embeddings: np.ndarray
    terminals: np.ndarray
    episode_id: int
    step_indices: np.ndarray
    truncated: bool

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @property
    def ends_terminal(self) -> bool:
        """最后一步是否为终止转移"""
        return bool(len(self) > 0 and self.terminals[-1])

    @property
    def bootstrap_observation(self) -> np.ndarray:
        """末端自举所用的后继观测"""
        return self.next_observations[-1]

    @property
    def transitions(self) -> list[Transition]:
        """按顺序展开为 Transition 列表"""
        return [
            Transition(
                obs=self.observations[i],
                action=int(self.actions[i]),
                reward=float(self.rewards[i]),
                next_obs=self.next_observations[i],
                episode_id=self.episode_id,
                step_index=int(self.step_indices[i]),
                terminal=bool(self.terminals[i]),
                embedding=self.embeddings[i],
            )
            for i in range(len(self))
        ]


@dataclass
class ReplayStats:
    """回放缓冲区计数器"""
    appended: int = 0
    evictions: int = 0


class ReplayMemory:
    """
    环形回放缓冲区

    使用示例:
        memory = ReplayMemory(capacity=50_000, obs_dim=195, embedding_dim=64, n_actions=4)
        slot = memory.append(transition)
        slices = memory.knn_trajectories(h, m=10, max_len=50)
        batch = memory.sample(48, rng)
    """

    def __init__(self, capacity: int, obs_dim: int, embedding_dim: int, n_actions: int):
        """
        初始化回放缓冲区

        Args:
            capacity: 容量 N
            obs_dim: 展平后的观测维度
            embedding_dim: 嵌入维度 E
            n_actions: 动作数 A
        """
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.embedding_dim = int(embedding_dim)
        self.n_actions = int(n_actions)

        n = self.capacity
        self._obs = np.zeros((n, self.obs_dim), dtype=np.float32)
        self._next_obs = np.zeros((n, self.obs_dim), dtype=np.float32)
        self._actions = np.zeros(n, dtype=np.int64)
        self._rewards = np.zeros(n, dtype=np.float64)
        self._embeddings = np.zeros((n, self.embedding_dim), dtype=np.float32)
        self._episode_ids = np.full(n, -1, dtype=np.int64)
        self._step_indices = np.zeros(n, dtype=np.int64)
        self._terminals = np.zeros(n, dtype=bool)
        self._live = np.zeros(n, dtype=bool)
        self._next_slot = np.full(n, -1, dtype=np.int64)
        # 全局写入序号，作为索引ID；槽位 = uid % capacity
        self._uids = np.full(n, -1, dtype=np.int64)

        self._ptr = 0
        self._size = 0
        self._episode_tail: dict[int, int] = {}
        self.index = NNIndex(self.embedding_dim, initial_capacity=min(n, 1 << 16))
        self.stats = ReplayStats()

    def __len__(self) -> int:
        return self._size

    @property
    def is_full(self) -> bool:
        return self._size == self.capacity

    def is_live(self, slot: int) -> bool:
        """槽位是否存有有效转移"""
        return 0 <= slot < self.capacity and bool(self._live[slot])

    def _evict(self, slot: int) -> None:
        self.index.remove(int(self._uids[slot]))
        episode_id = int(self._episode_ids[slot])
        if self._episode_tail.get(episode_id) == slot:
            del self._episode_tail[episode_id]
        self._live[slot] = False
        self._next_slot[slot] = -1
        self.stats.evictions += 1
        logger.debug(f"Evicted replay slot {slot} (episode {episode_id})")

    def append(self, t: Transition) -> int:
        """
        写入一个转移

        Args:
            t: 转移（embedding 必须已填写）

        Returns:
            写入的槽位
        """
        if t.embedding is None:
            raise ValueError("transition embedding must be set before appending")
        if not 0 <= int(t.action) < self.n_actions:
            raise ValueError(f"action {t.action} outside [0, {self.n_actions})")
        if not np.isfinite(t.reward):
            raise ValueError(f"reward must be finite, got {t.reward}")
        embedding = np.asarray(t.embedding, dtype=np.float32).reshape(-1)
        if embedding.shape[0] != self.embedding_dim:
            raise DimensionError(
                f"Expected embedding of dimension {self.embedding_dim}, got {embedding.shape[0]}"
            )

        slot = self._ptr
        if self._live[slot]:
            self._evict(slot)

        uid = self.stats.appended
        self._obs[slot] = np.asarray(t.obs, dtype=np.float32).reshape(-1)
        self._next_obs[slot] = np.asarray(t.next_obs, dtype=np.float32).reshape(-1)
        self._actions[slot] = int(t.action)
        self._rewards[slot] = float(t.reward)
        self._embeddings[slot] = embedding
        self._episode_ids[slot] = int(t.episode_id)
        self._step_indices[slot] = int(t.step_index)
        self._terminals[slot] = bool(t.terminal)
        self._live[slot] = True
        self._next_slot[slot] = -1
        self._uids[slot] = uid
        self.index.insert(uid, embedding)

        # 链接前驱：同一回合、步号连续、前驱非终止
        prev = self._episode_tail.get(int(t.episode_id))
        if (
            prev is not None
            and self._live[prev]
            and not self._terminals[prev]
            and self._step_indices[prev] == int(t.step_index) - 1
        ):
            self._next_slot[prev] = slot
        if t.terminal:
            self._episode_tail.pop(int(t.episode_id), None)
        else:
            self._episode_tail[int(t.episode_id)] = slot

        self._ptr = (self._ptr + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.stats.appended += 1
        return slot

    def successor(self, slot: int) -> int | None:
        """
        返回槽位的有效后继槽位

        后继被覆盖或尚未写入时返回 None
        """
        nxt = int(self._next_slot[slot])
        if nxt < 0 or not self._live[nxt]:
            return None
        if (
            self._episode_ids[nxt] != self._episode_ids[slot]
            or self._step_indices[nxt] != self._step_indices[slot] + 1
        ):
            return None
        return nxt

    def extract_trajectory(self, start_slot: int, max_len: int) -> TrajectorySlice:
        """
        从某槽位开始沿后继链接抽取轨迹片段

        Args:
            start_slot: 起始槽位（必须有效）
            max_len: 最大长度 τ

        Returns:
            TrajectorySlice

        Raises:
            DeadSlotError: 起始槽位无效
        """
        if max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {max_len}")
        if not self.is_live(start_slot):
            raise DeadSlotError(f"slot {start_slot} holds no live transition")

        slots = [int(start_slot)]
        truncated = True
        while True:
            current = slots[-1]
            if self._terminals[current]:
                truncated = False
                break
            if len(slots) >= max_len:
                break
            nxt = self.successor(current)
            if nxt is None:
                break
            slots.append(nxt)

        idx = np.asarray(slots, dtype=np.int64)
        return TrajectorySlice(
            slots=idx,
            observations=self._obs[idx].copy(),
            next_observations=self._next_obs[idx].copy(),
            actions=self._actions[idx].copy(),
            rewards=self._rewards[idx].copy(),
            embeddings=self._embeddings[idx].copy(),
            terminals=self._terminals[idx].copy(),
            episode_id=int(self._episode_ids[start_slot]),
            step_indices=self._step_indices[idx].copy(),
            truncated=truncated,
        )

    def knn_trajectories(self, h, m: int, max_len: int) -> list[TrajectorySlice]:
        """
        检索 m 个最近邻转移并返回各自的前向轨迹片段

        Args:
            h: 查询嵌入
            m: 近邻数 M
            max_len: 每条片段的最大长度 τ

        Returns:
            片段列表，顺序与近邻距离一致；缓冲区为空时返回空列表
        """
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        if self._size == 0:
            return []
        hits = self.index.query(h, m)
        return [self.extract_trajectory(hit.id % self.capacity, max_len) for hit in hits]

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """
        均匀采样训练批次

        Returns:
            包含 obs / actions / rewards / next_obs / terminals 的字典
        """
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay memory")
        # 未满时有效槽位恰为 [0, size)
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "obs": self._obs[idx],
            "actions": self._actions[idx],
            "rewards": self._rewards[idx],
            "next_obs": self._next_obs[idx],
            "terminals": self._terminals[idx],
        }

    def get(self, slot: int) -> Transition:
        """读取某槽位的转移"""
        if not self.is_live(slot):
            raise DeadSlotError(f"slot {slot} holds no live transition")
        return Transition(
            obs=self._obs[slot].copy(),
            action=int(self._actions[slot]),
            reward=float(self._rewards[slot]),
            next_obs=self._next_obs[slot].copy(),
            episode_id=int(self._episode_ids[slot]),
            step_index=int(self._step_indices[slot]),
            terminal=bool(self._terminals[slot]),
            embedding=self._embeddings[slot].copy(),
        )

    def live_slots(self) -> list[int]:
        """全部有效槽位"""
        return [int(s) for s in np.flatnonzero(self._live)]

    def uid_of(self, slot: int) -> int:
        """槽位当前转移的索引ID"""
        return int(self._uids[slot])

    # ------------------------------------------------------------------
    # 检查点
    # ------------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """导出全部存储数组（用于检查点）"""
        return {
            "obs": self._obs,
            "next_obs": self._next_obs,
            "actions": self._actions,
            "rewards": self._rewards,
            "embeddings": self._embeddings,
            "episode_ids": self._episode_ids,
            "step_indices": self._step_indices,
            "terminals": self._terminals,
            "live": self._live,
            "next_slot": self._next_slot,
            "uids": self._uids,
        }

    def state_meta(self) -> dict[str, Any]:
        """导出标量状态（用于检查点）"""
        return {
            "capacity": self.capacity,
            "obs_dim": self.obs_dim,
            "embedding_dim": self.embedding_dim,
            "n_actions": self.n_actions,
            "ptr": self._ptr,
            "size": self._size,
            "appended": self.stats.appended,
            "evictions": self.stats.evictions,
            "episode_tail": {str(k): v for k, v in sorted(self._episode_tail.items())},
        }

    @classmethod
    def from_state(cls, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> "ReplayMemory":
        """从检查点状态重建，并按写入顺序重建嵌入索引"""
        memory = cls(meta["capacity"], meta["obs_dim"], meta["embedding_dim"], meta["n_actions"])
        for name, target in memory.state_arrays().items():
            source = arrays[name]
            if source.shape != target.shape:
                raise ValueError(f"replay array '{name}' has shape {source.shape}, expected {target.shape}")
            target[...] = source
        memory._ptr = int(meta["ptr"])
        memory._size = int(meta["size"])
        memory.stats = ReplayStats(appended=int(meta["appended"]), evictions=int(meta["evictions"]))
        memory._episode_tail = {int(k): int(v) for k, v in meta["episode_tail"].items()}
        live = np.flatnonzero(memory._live)
        for slot in live[np.argsort(memory._uids[live], kind="stable")]:
            memory.index.insert(int(memory._uids[slot]), memory._embeddings[slot])
        return memory
