"""
参数化动作值函数 Q_θ

功能：
- QFunction 接口：q_values / embedding / 参数量
- MlpQFunction：numpy 实现的MLP，手写反向传播，倒数第二层激活即嵌入
- AdamOptimizer：Adam 优化器（β1=0.9, β2=0.999, ε=1e-8）
- train_step / sync_target：Q-learning 训练与目标网络同步
- TabularQFunction：表格实现，供 trace computation 测试作为真值

并发约定：训练只在单线程中修改参数；冻结副本上的推理可与训练并行。
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.errors import ArchitectureMismatchError, DimensionError, TrainingDivergenceError


logger = logging.getLogger(__name__)


class QFunction(ABC):
    """
    动作值函数接口

    obs 为单个观测（一维，长度 obs_dim）时返回一维结果；
    为二维批次 (n, obs_dim) 时返回 (n, ·)。
    """

    def __init__(self, obs_dim: int, n_actions: int, embedding_dim: int):
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.embedding_dim = int(embedding_dim)

    @abstractmethod
    def q_values(self, obs) -> np.ndarray:
        """返回每个动作的值，长度 A"""

    @abstractmethod
    def embedding(self, obs) -> np.ndarray:
        """返回观测的嵌入，长度 E"""

    def q_and_embedding(self, obs) -> tuple[np.ndarray, np.ndarray]:
        """一次前向同时得到动作值和嵌入（子类可重写以避免重复计算）"""
        return self.q_values(obs), self.embedding(obs)

    @property
    def parameter_count(self) -> int:
        return 0


@dataclass
class TrainBatch:
    """一个训练批次 (s, a, r, s', terminal)"""
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs))
        self.next_obs = np.atleast_2d(np.asarray(self.next_obs))
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        self.rewards = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        self.terminals = np.asarray(self.terminals, dtype=bool).reshape(-1)
        size = self.actions.shape[0]
        if size < 1:
            raise ValueError("batch size must be >= 1")
        for name in ("obs", "next_obs", "rewards", "terminals"):
            if getattr(self, name).shape[0] != size:
                raise ValueError(f"batch field '{name}' has inconsistent length")

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @classmethod
    def from_dict(cls, data: dict[str, np.ndarray]) -> "TrainBatch":
        """从 ReplayMemory.sample 的结果构建"""
        return cls(
            obs=data["obs"],
            actions=data["actions"],
            rewards=data["rewards"],
            next_obs=data["next_obs"],
            terminals=data["terminals"],
        )


class MlpQFunction(QFunction):
    """
    全连接Q网络

    层结构：输入 → 隐藏层... → E（嵌入层）→ A。
    除输出层外都使用ReLU；嵌入是宽度为 E 的那一层的激活后输出。

    使用示例:
        net = MlpQFunction.build(obs_dim=195, n_actions=4, hidden=[256], embedding_dim=64, seed=0)
        q = net.q_values(obs)
        h = net.embedding(obs)
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        """
        初始化网络

        Args:
            layer_sizes: [输入维度, 隐藏层..., E, A]，至少三项
            rng: 初始化用随机数生成器（按 fan-in 均匀初始化）
            dtype: 参数精度
        """
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 3:
            raise ValueError("layer_sizes needs at least input, embedding and output sizes")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        super().__init__(obs_dim=sizes[0], n_actions=sizes[-1], embedding_dim=sizes[-2])
        self.layer_sizes = tuple(sizes)
        self.dtype = np.dtype(dtype)

        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype))
            self.biases.append(np.zeros(fan_out, dtype=self.dtype))

    @classmethod
    def build(
        cls,
        obs_dim: int,
        n_actions: int,
        hidden: Sequence[int],
        embedding_dim: int,
        seed: int = 0,
    ) -> "MlpQFunction":
        """按配置构建网络"""
        return cls([obs_dim, *hidden, embedding_dim, n_actions], rng=np.random.default_rng(seed))

    @property
    def architecture(self) -> tuple[int, ...]:
        return self.layer_sizes

    @property
    def parameter_count(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def parameters(self) -> list[np.ndarray]:
        """参数列表，顺序为 [W0, b0, W1, b1, ...]（返回引用）"""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        """按 parameters() 的顺序写入参数"""
        current = self.parameters()
        if len(params) != len(current):
            raise ArchitectureMismatchError(f"expected {len(current)} parameter arrays, got {len(params)}")
        for dst, src in zip(current, params):
            src = np.asarray(src)
            if src.shape != dst.shape:
                raise ArchitectureMismatchError(f"parameter shape {src.shape} does not match {dst.shape}")
            np.copyto(dst, src.astype(self.dtype, copy=False))

    def copy(self, dtype=None) -> "MlpQFunction":
        """深拷贝（可转换精度，例如 float64 影子副本用于梯度检查）"""
        clone = MlpQFunction.__new__(MlpQFunction)
        QFunction.__init__(clone, self.obs_dim, self.n_actions, self.embedding_dim)
        clone.layer_sizes = self.layer_sizes
        clone.dtype = np.dtype(dtype) if dtype is not None else self.dtype
        clone.weights = [w.astype(clone.dtype, copy=True) for w in self.weights]
        clone.biases = [b.astype(clone.dtype, copy=True) for b in self.biases]
        return clone

    def _as_batch(self, obs) -> tuple[np.ndarray, bool]:
        x = np.asarray(obs, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.obs_dim:
            raise DimensionError(f"Expected observations of dimension {self.obs_dim}, got shape {np.shape(obs)}")
        return x, single

    def forward(self, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """
        批量前向

        Returns:
            (pre_activations, activations)；activations[0] 为输入，
            activations[-2] 为嵌入，activations[-1] 为Q值
        """
        pre_activations = []
        activations = [x]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w + b
            pre_activations.append(z)
            activations.append(z if i == last else np.maximum(z, 0))
        return pre_activations, activations

    def q_values(self, obs) -> np.ndarray:
        x, single = self._as_batch(obs)
        _, acts = self.forward(x)
        return acts[-1][0] if single else acts[-1]

    def embedding(self, obs) -> np.ndarray:
        x, single = self._as_batch(obs)
        _, acts = self.forward(x)
        return acts[-2][0] if single else acts[-2]

    def q_and_embedding(self, obs) -> tuple[np.ndarray, np.ndarray]:
        x, single = self._as_batch(obs)
        _, acts = self.forward(x)
        if single:
            return acts[-1][0], acts[-2][0]
        return acts[-1], acts[-2]

    def loss_and_gradients(
        self,
        obs: np.ndarray,
        actions: np.ndarray,
        targets: np.ndarray,
    ) -> tuple[float, list[np.ndarray]]:
        """
        平方误差损失及其对全部参数的梯度

        loss = mean_i (Q(s_i, a_i) - y_i)^2

        Returns:
            (loss, grads)，grads 顺序与 parameters() 一致
        """
        x, _ = self._as_batch(obs)
        actions = np.asarray(actions, dtype=np.int64)
        targets = np.asarray(targets, dtype=self.dtype)
        n = x.shape[0]
        rows = np.arange(n)

        pre, acts = self.forward(x)
        q = acts[-1]
        err = q[rows, actions] - targets
        loss = float(np.mean(err.astype(np.float64) ** 2))

        delta = np.zeros_like(q)
        delta[rows, actions] = 2.0 * err / n

        grads_w: list[np.ndarray] = [None] * len(self.weights)
        grads_b: list[np.ndarray] = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = acts[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (pre[layer - 1] > 0)

        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend([gw, gb])
        return loss, grads


class AdamOptimizer:
    """
    Adam 优化器

    使用示例:
        optimizer = AdamOptimizer(net.parameters(), learning_rate=1e-4)
        optimizer.step(net.parameters(), grads)
    """

    def __init__(
        self,
        params: Sequence[np.ndarray],
        learning_rate: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """原地更新参数"""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ArchitectureMismatchError("optimizer state does not match parameter list")
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / correction1
            v_hat = v / correction2
            p -= (self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)).astype(p.dtype, copy=False)

    def state_arrays(self) -> list[np.ndarray]:
        return [*self.m, *self.v]

    def load_state(self, t: int, arrays: Sequence[np.ndarray]) -> None:
        """从检查点恢复"""
        n = len(self.m)
        if len(arrays) != 2 * n:
            raise ArchitectureMismatchError(f"expected {2 * n} optimizer arrays, got {len(arrays)}")
        for dst, src in zip(self.m + self.v, arrays):
            if src.shape != dst.shape:
                raise ArchitectureMismatchError(f"optimizer array shape {src.shape} does not match {dst.shape}")
            np.copyto(dst, src)
        self.t = int(t)


def q_learning_targets(target: QFunction, batch: TrainBatch, gamma: float) -> np.ndarray:
    """y = r + γ max_a Q̃(s', a)；终止转移 y = r"""
    next_q = np.asarray(target.q_values(batch.next_obs), dtype=np.float64)
    bootstrap = np.where(batch.terminals, 0.0, next_q.max(axis=1))
    return batch.rewards + gamma * bootstrap


def train_step(
    online: MlpQFunction,
    target: QFunction,
    batch: TrainBatch,
    gamma: float,
    optimizer: AdamOptimizer,
) -> float:
    """
    一步 Q-learning 训练

    Args:
        online: 在线网络（被更新）
        target: 目标网络（只读）
        batch: 训练批次
        gamma: 折扣因子
        optimizer: 在线网络的优化器

    Returns:
        本批次的平方误差损失

    Raises:
        TrainingDivergenceError: 损失非有限
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    targets = q_learning_targets(target, batch, gamma)
    loss, grads = online.loss_and_gradients(batch.obs, batch.actions, targets)
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite training loss: {loss}")
    optimizer.step(online.parameters(), grads)
    return loss


def sync_target(online: MlpQFunction, target: MlpQFunction) -> None:
    """把在线网络参数逐位复制到目标网络"""
    if online.architecture != target.architecture:
        raise ArchitectureMismatchError(
            f"cannot sync {online.architecture} into {target.architecture}"
        )
    target.set_parameters(online.parameters())
    logger.debug("Target network synced")


class TabularQFunction(QFunction):
    """
    表格动作值函数（测试用真值）

    观测是离散状态编号；嵌入默认是 one-hot，也可以传入手工特征。
    """

    def __init__(self, table: np.ndarray, features: np.ndarray | None = None):
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2:
            raise ValueError("table must be 2-D (states x actions)")
        n_states, n_actions = table.shape
        if features is None:
            features = np.eye(n_states, dtype=np.float64)
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != n_states:
            raise DimensionError("features must have one row per state")
        super().__init__(obs_dim=1, n_actions=n_actions, embedding_dim=features.shape[1])
        self.table = table
        self.features = features

    def _state_ids(self, obs) -> tuple[np.ndarray, bool]:
        x = np.asarray(obs)
        single = x.ndim == 0 or (x.ndim == 1 and x.shape[0] == 1)
        ids = np.rint(x.reshape(-1)).astype(np.int64)
        if np.any(ids < 0) or np.any(ids >= self.table.shape[0]):
            raise DimensionError(f"state ids outside [0, {self.table.shape[0]})")
        return ids, single

    def q_values(self, obs) -> np.ndarray:
        ids, single = self._state_ids(obs)
        rows = self.table[ids]
        return rows[0].copy() if single else rows.copy()

    def embedding(self, obs) -> np.ndarray:
        ids, single = self._state_ids(obs)
        rows = self.features[ids]
        return rows[0].copy() if single else rows.copy()

    @property
    def parameter_count(self) -> int:
        return int(self.table.size)
