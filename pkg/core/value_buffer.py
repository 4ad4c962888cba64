"""
值缓冲区：缓存 trace computation 得到的 (嵌入, Q_NP) 对

行动时按当前嵌入检索 k 个近邻，给出 Q_NP 的估计。
温度为 0 时取算术平均；温度 > 0 时按 softmax(-距离/温度) 加权。
容量满时按 FIFO 淘汰最旧条目。
"""

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from core.errors import DimensionError
from core.nn_index import NNIndex


logger = logging.getLogger(__name__)


@dataclass
class ValueBufferEntry:
    """一条缓存的估计"""
    embedding: np.ndarray
    qnp: np.ndarray


class ValueBuffer:
    """
    固定容量的值缓冲区

    使用示例:
        buffer = ValueBuffer(capacity=2000, embedding_dim=64, n_actions=4)
        buffer.insert(h, q_np)
        estimate = buffer.estimate(h, k=5, temperature=1e-5)
    """

    def __init__(self, capacity: int, embedding_dim: int, n_actions: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.embedding_dim = int(embedding_dim)
        self.n_actions = int(n_actions)

        self.index = NNIndex(self.embedding_dim, initial_capacity=self.capacity)
        self._entries: dict[int, np.ndarray] = {}
        self._order: deque[int] = deque()
        self._next_id = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._order)

    def insert(self, e, q) -> None:
        """
        写入一条估计，满时淘汰最旧条目

        Raises:
            DimensionError: 嵌入或Q向量维度不符
            ValueError: Q向量包含非有限值
        """
        qnp = np.asarray(q, dtype=np.float64).reshape(-1)
        if qnp.shape[0] != self.n_actions:
            raise DimensionError(f"Expected Q vector of length {self.n_actions}, got {qnp.shape[0]}")
        if not np.all(np.isfinite(qnp)):
            raise ValueError("Q_NP vector contains non-finite values")

        if len(self._order) == self.capacity:
            oldest = self._order.popleft()
            self.index.remove(oldest)
            del self._entries[oldest]
            self.evictions += 1

        entry_id = self._next_id
        self.index.insert(entry_id, e)
        self._entries[entry_id] = qnp
        self._order.append(entry_id)
        self._next_id += 1

    def insert_many(self, embeddings: np.ndarray, q_values: np.ndarray) -> None:
        """按顺序批量写入"""
        for e, q in zip(embeddings, q_values):
            self.insert(e, q)

    def estimate(self, e, k: int, temperature: float) -> np.ndarray | None:
        """
        估计 Q_NP(e, ·)

        Args:
            e: 查询嵌入
            k: 近邻数（>=1），不足 k 条时使用全部
            temperature: 0 为算术平均，>0 为 softmax(-d/temperature) 加权

        Returns:
            长度 A 的向量；缓冲区为空时返回 None
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {temperature}")
        hits = self.index.query(e, k)
        if not hits:
            return None

        qs = np.stack([self._entries[hit.id] for hit in hits])
        if temperature == 0:
            return qs.mean(axis=0)

        dists = np.array([hit.distance for hit in hits], dtype=np.float64)
        # 减去最小距离，避免小温度下全部下溢
        logits = -(dists - dists.min()) / temperature
        weights = np.exp(logits)
        weights /= weights.sum()
        return weights @ qs

    def entries(self) -> list[ValueBufferEntry]:
        """按写入顺序返回全部条目"""
        return [ValueBufferEntry(embedding=self.index.get(i), qnp=self._entries[i].copy()) for i in self._order]

    def clear(self) -> None:
        self.index.clear()
        self._entries.clear()
        self._order.clear()

    # ------------------------------------------------------------------
    # 检查点
    # ------------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """按写入顺序导出 (嵌入, Q_NP, ID)"""
        ids = list(self._order)
        embeddings = np.zeros((len(ids), self.embedding_dim), dtype=np.float32)
        qnp = np.zeros((len(ids), self.n_actions), dtype=np.float64)
        for row, entry_id in enumerate(ids):
            embeddings[row] = self.index.get(entry_id)
            qnp[row] = self._entries[entry_id]
        return {"embeddings": embeddings, "qnp": qnp, "ids": np.asarray(ids, dtype=np.int64)}

    def state_meta(self) -> dict:
        return {
            "capacity": self.capacity,
            "embedding_dim": self.embedding_dim,
            "n_actions": self.n_actions,
            "next_id": self._next_id,
            "evictions": self.evictions,
        }

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "ValueBuffer":
        buffer = cls(meta["capacity"], meta["embedding_dim"], meta["n_actions"])
        for entry_id, e, q in zip(arrays["ids"], arrays["embeddings"], arrays["qnp"]):
            buffer.index.insert(int(entry_id), e)
            buffer._entries[int(entry_id)] = np.asarray(q, dtype=np.float64).copy()
            buffer._order.append(int(entry_id))
        buffer._next_id = int(meta["next_id"])
        buffer.evictions = int(meta["evictions"])
        return buffer
