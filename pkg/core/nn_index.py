"""
精确k近邻索引

功能：
- 固定维度嵌入的插入 / 删除
- 平方L2距离下的精确暴力检索
- 距离相同时按ID升序，保证结果确定

回放缓冲区和值缓冲区共用此索引。
并发约定：任意多个读者 或 一个写者；索引内部不启动线程。
"""

import logging
from dataclasses import dataclass

import numpy as np

from core.errors import DimensionError, DuplicateIdError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NeighbourHit:
    """一次检索命中"""
    id: int
    distance: float


class NNIndex:
    """
    暴力扫描的精确kNN索引

    向量先取整到 float32，再以 float64 存放在连续数组中，删除时用末尾元素填补空位。
    每行的平方范数随插入/删除维护，查询时按 ‖x‖² − 2·x·q + ‖q‖² 在 float64 下
    一次矩阵向量乘得到全部距离，最后转回 float32 比较。

    使用示例:
        index = NNIndex(dim=64)
        index.insert(7, embedding)
        hits = index.query(embedding, k=5)
    """

    def __init__(self, dim: int, initial_capacity: int = 1024):
        """
        初始化索引

        Args:
            dim: 嵌入维度 E
            initial_capacity: 预分配行数，不足时自动翻倍
        """
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = int(dim)
        capacity = max(1, int(initial_capacity))
        self._vectors = np.zeros((capacity, self.dim), dtype=np.float64)
        self._norms = np.zeros(capacity, dtype=np.float64)
        self._ids = np.zeros(capacity, dtype=np.int64)
        self._row_of: dict[int, int] = {}
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def size(self) -> int:
        """当前存放的向量数"""
        return self._size

    def __contains__(self, item_id: int) -> bool:
        return int(item_id) in self._row_of

    def _as_embedding(self, e) -> np.ndarray:
        vec = np.asarray(e, dtype=np.float32).reshape(-1)
        if vec.shape[0] != self.dim:
            raise DimensionError(f"Expected embedding of dimension {self.dim}, got {vec.shape[0]}")
        return vec

    def _grow(self) -> None:
        new_capacity = self._vectors.shape[0] * 2
        vectors = np.zeros((new_capacity, self.dim), dtype=np.float64)
        norms = np.zeros(new_capacity, dtype=np.float64)
        ids = np.zeros(new_capacity, dtype=np.int64)
        vectors[:self._size] = self._vectors[:self._size]
        norms[:self._size] = self._norms[:self._size]
        ids[:self._size] = self._ids[:self._size]
        self._vectors, self._norms, self._ids = vectors, norms, ids

    def insert(self, item_id: int, e) -> None:
        """
        插入一个嵌入

        Args:
            item_id: 64位ID
            e: 长度为 E 的嵌入

        Raises:
            DimensionError: 维度不符
            DuplicateIdError: ID已存在
            ValueError: 包含 NaN/Inf
        """
        item_id = int(item_id)
        vec = self._as_embedding(e)
        if item_id in self._row_of:
            raise DuplicateIdError(f"id {item_id} already present in index")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding contains non-finite values")

        if self._size == self._vectors.shape[0]:
            self._grow()
        row = self._size
        row_vec = vec.astype(np.float64)
        self._vectors[row] = row_vec
        self._norms[row] = row_vec @ row_vec
        self._ids[row] = item_id
        self._row_of[item_id] = row
        self._size += 1

    def remove(self, item_id: int) -> bool:
        """
        删除一个ID

        Returns:
            是否删除成功（ID不存在时返回 False）
        """
        row = self._row_of.pop(int(item_id), None)
        if row is None:
            return False
        last = self._size - 1
        if row != last:
            moved_id = int(self._ids[last])
            self._vectors[row] = self._vectors[last]
            self._norms[row] = self._norms[last]
            self._ids[row] = moved_id
            self._row_of[moved_id] = row
        self._size = last
        return True

    def distances(self, q) -> tuple[np.ndarray, np.ndarray]:
        """
        计算查询向量到所有存储向量的平方L2距离

        Returns:
            (ids, distances)，顺序与内部存储一致
        """
        vec = self._as_embedding(q).astype(np.float64)
        n = self._size
        sq = self._norms[:n] - 2.0 * (self._vectors[:n] @ vec) + vec @ vec
        # 展开式可能因舍入出现微小负值
        dists = np.maximum(sq, 0.0).astype(np.float32)
        return self._ids[:self._size], dists

    def query(self, q, k: int) -> list[NeighbourHit]:
        """
        检索 k 个最近邻

        Args:
            q: 查询嵌入
            k: 近邻数量（>=1）

        Returns:
            min(k, size) 个命中，按距离升序，距离相同按ID升序
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        ids, dists = self.distances(q)
        n = ids.shape[0]
        if n == 0:
            return []

        if n > k:
            # 先用 partition 取候选，再把与第k个距离相等的全部纳入，保证平局规则
            kth = np.partition(dists, k - 1)[k - 1]
            candidates = np.flatnonzero(dists <= kth)
        else:
            candidates = np.arange(n)

        order = np.lexsort((ids[candidates], dists[candidates]))[:k]
        chosen = candidates[order]
        return [NeighbourHit(id=int(ids[i]), distance=float(dists[i])) for i in chosen]

    def ids(self) -> list[int]:
        """当前全部ID（无序）"""
        return [int(i) for i in self._ids[:self._size]]

    def get(self, item_id: int) -> np.ndarray:
        """取出某ID对应的嵌入副本"""
        row = self._row_of[int(item_id)]
        return self._vectors[row].astype(np.float32)

    def clear(self) -> None:
        """清空索引"""
        self._row_of.clear()
        self._size = 0
