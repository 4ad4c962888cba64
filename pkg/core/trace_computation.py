"""
Trace computation：把检索到的经验变成非参数值估计 Q_NP

功能：
- nstep_trace：沿轨迹反向回传 n-step 回报，反事实动作直接用 Q_θ
- tcp_trace：轨迹中心规划，每一步对 Q_NP 取 max 做策略改进
- kbrl_plan / KBRLPlanner：带吸收伪状态 ŝ 的核方法值迭代
- kbrl_trace：把 KBRL 联合应用到多条检索轨迹
- compute_traces：按 trace_mode 分派

末端自举：终止转移 → 0；截断 → max_a Q_θ(后继状态, a)。
所有函数都是输入的纯函数，可以在互不相交的轨迹上并行运行。
"""

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from core.approximator import QFunction
from core.errors import DimensionError, EmptyTrajectoryError, NoInformationError
from core.replay_memory import TrajectorySlice


logger = logging.getLogger(__name__)

# 高斯相似度低于此值视为 0
SIMILARITY_FLOOR = 1e-30


@dataclass
class QTable:
    """
    一条轨迹上的值估计

    q: (T, A)，第 t 行为 Q_NP(s_t, ·)
    v: (T,)，V_NP(s_t)
    """
    q: np.ndarray
    v: np.ndarray

    def __len__(self) -> int:
        return int(self.q.shape[0])


@dataclass(frozen=True)
class KernelParams:
    """KBRL 核参数"""
    bandwidth: float = 1e-4
    pseudo_similarity: float = 1e-2
    max_iters: int = 50
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.pseudo_similarity < 0:
            raise ValueError(f"pseudo_similarity must be >= 0, got {self.pseudo_similarity}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.convergence_tol > 0:
            raise ValueError(f"convergence_tol must be > 0, got {self.convergence_tol}")


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")


def _backward_recursion(
    traj: TrajectorySlice,
    q_function: QFunction,
    gamma: float,
    improve: bool,
) -> QTable:
    if len(traj) == 0:
        raise EmptyTrajectoryError("cannot compute a trace over an empty trajectory")
    _check_gamma(gamma)

    q_theta = np.asarray(q_function.q_values(traj.observations), dtype=np.float64).reshape(len(traj), -1)
    if traj.ends_terminal:
        v_next = 0.0
    else:
        v_next = float(np.max(q_function.q_values(traj.bootstrap_observation)))

    q = q_theta.copy()
    v = np.empty(len(traj), dtype=np.float64)
    for t in range(len(traj) - 1, -1, -1):
        a_t = int(traj.actions[t])
        q[t, a_t] = float(traj.rewards[t]) + gamma * v_next
        v[t] = q[t].max() if improve else q[t, a_t]
        v_next = v[t]
    return QTable(q=q, v=v)


def nstep_trace(traj: TrajectorySlice, q_function: QFunction, gamma: float) -> QTable:
    """
    n-step 估计

    V(s_t) = r_t + γV(s_{t+1})，末端按终止/截断自举；
    轨迹上的动作取 n-step 回报，其余动作填 Q_θ(s_t, a)。
    """
    return _backward_recursion(traj, q_function, gamma, improve=False)


def tcp_trace(traj: TrajectorySlice, q_function: QFunction, gamma: float) -> QTable:
    """
    轨迹中心规划（TCP）

    Q_NP(s_t, a) = r_t + γV_NP(s_{t+1})（a = a_t）或 Q_θ(s_t, a)（否则），
    V_NP(s_t) = max_a Q_NP(s_t, a)。
    """
    return _backward_recursion(traj, q_function, gamma, improve=True)


@dataclass
class TransitionStore:
    """
    KBRL 的经验存储：所有动作的 (s, a, r, s') 放在一起，S_a 用 actions 掩码得到

    result_observations 用于在伪状态上计算 Q_θ(s', ·)
    """
    origin_embeddings: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    result_embeddings: np.ndarray
    result_observations: np.ndarray
    terminals: np.ndarray

    def __post_init__(self):
        self.origin_embeddings = np.atleast_2d(np.asarray(self.origin_embeddings, dtype=np.float64))
        self.result_embeddings = np.atleast_2d(np.asarray(self.result_embeddings, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        self.rewards = np.asarray(self.rewards, dtype=np.float64).reshape(-1)
        self.terminals = np.asarray(self.terminals, dtype=bool).reshape(-1)
        self.result_observations = np.asarray(self.result_observations)
        n = self.actions.shape[0]
        if n and self.origin_embeddings.shape != self.result_embeddings.shape:
            raise DimensionError("origin and result embeddings must have the same shape")
        for name in ("origin_embeddings", "rewards", "result_embeddings", "result_observations", "terminals"):
            if n and getattr(self, name).shape[0] != n:
                raise ValueError(f"store field '{name}' has inconsistent length")

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    def indices_for(self, action: int) -> np.ndarray:
        """S_a 在存储中的下标"""
        return np.flatnonzero(self.actions == action)

    @classmethod
    def from_slices(cls, slices: Sequence[TrajectorySlice], q_function: QFunction) -> "TransitionStore":
        """
        由检索到的轨迹构建存储

        片段内后继转移的存储嵌入作为结果状态嵌入；片段末端的结果状态
        用当前网络对后继观测计算嵌入。
        """
        origins, actions, rewards, results, result_obs, terminals = [], [], [], [], [], []
        for traj in slices:
            if len(traj) == 0:
                continue
            tail_embedding = np.asarray(q_function.embedding(traj.bootstrap_observation), dtype=np.float64)
            result_emb = np.vstack([traj.embeddings[1:].astype(np.float64), tail_embedding[None, :]])
            origins.append(traj.embeddings.astype(np.float64))
            actions.append(traj.actions)
            rewards.append(traj.rewards)
            results.append(result_emb)
            result_obs.append(traj.next_observations)
            terminals.append(traj.terminals)
        if not origins:
            raise EmptyTrajectoryError("no transitions to build a KBRL store from")
        return cls(
            origin_embeddings=np.vstack(origins),
            actions=np.concatenate(actions),
            rewards=np.concatenate(rewards),
            result_embeddings=np.vstack(results),
            result_observations=np.vstack(result_obs),
            terminals=np.concatenate(terminals),
        )


@dataclass
class KBRLResult:
    """kbrl_plan 的结果；converged=False 表示值迭代到 max_iters 仍未收敛，返回最后一次迭代"""
    value: float
    converged: bool
    iterations: int


@dataclass
class _ActionKernel:
    """某个动作的归一化权重：数据部分 (n_eval, |S_a|)，伪状态部分 (n_eval,)"""
    members: np.ndarray
    data_weights: np.ndarray
    pseudo_weights: np.ndarray
    valid: np.ndarray


def _squared_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diffs = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diffs, diffs)


class KBRLPlanner:
    """
    带吸收伪状态的 KBRL

    对每个评估状态 x 和动作 a，权重在 S_a ∪ {ŝ} 上归一化：
    κ(x, s_j) = exp(-‖x - s_j‖² / b)（低于 1e-30 视为 0），κ(x, ŝ) = C。
    伪状态的值是在被比较状态上评估的参数化值 Q_θ(x, a)。
    值迭代在全部结果状态 s' 上进行，直到相邻迭代最大变化 < tol 或达到 max_iters。

    使用示例:
        planner = KBRLPlanner(store, KernelParams(), q_function, gamma=0.99)
        q = planner.q_values(query_embeddings, query_observations)
    """

    def __init__(
        self,
        store: TransitionStore,
        params: KernelParams,
        q_function: QFunction,
        gamma: float,
    ):
        _check_gamma(gamma)
        self.store = store
        self.params = params
        self.q_function = q_function
        self.gamma = float(gamma)
        self.n_actions = q_function.n_actions

        self.values = np.zeros(len(store), dtype=np.float64)
        self.deltas: list[float] = []
        self.iterations = 0
        self.converged = len(store) == 0
        if len(store):
            self._run_value_iteration()

    def kernel(self, embeddings: np.ndarray) -> list[_ActionKernel]:
        """计算一组评估状态对每个动作的归一化权重"""
        x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        c = self.params.pseudo_similarity
        kernels = []
        for a in range(self.n_actions):
            members = self.store.indices_for(a)
            if members.size:
                sq = _squared_distances(x, self.store.origin_embeddings[members])
                raw = np.exp(-sq / self.params.bandwidth)
                raw[raw < SIMILARITY_FLOOR] = 0.0
            else:
                raw = np.zeros((x.shape[0], 0), dtype=np.float64)
            total = raw.sum(axis=1) + c
            valid = total > 0
            safe = np.where(valid, total, 1.0)
            kernels.append(_ActionKernel(
                members=members,
                data_weights=raw / safe[:, None],
                pseudo_weights=np.where(valid, c / safe, 0.0),
                valid=valid,
            ))
        return kernels

    def _backups(self, values: np.ndarray) -> np.ndarray:
        """每个存储转移的 r + γV(s')，终止转移只取 r"""
        return self.store.rewards + self.gamma * np.where(self.store.terminals, 0.0, values)

    def _action_values(
        self,
        kernels: list[_ActionKernel],
        q_theta: np.ndarray,
        values: np.ndarray,
    ) -> np.ndarray:
        backups = self._backups(values)
        n_eval = q_theta.shape[0]
        out = np.full((n_eval, self.n_actions), -np.inf, dtype=np.float64)
        for a, kern in enumerate(kernels):
            estimate = kern.data_weights @ backups[kern.members] + kern.pseudo_weights * q_theta[:, a]
            out[:, a] = np.where(kern.valid, estimate, -np.inf)
        return out

    def _run_value_iteration(self) -> None:
        kernels = self.kernel(self.store.result_embeddings)
        q_theta = np.asarray(self.q_function.q_values(self.store.result_observations), dtype=np.float64)
        q_theta = q_theta.reshape(len(self.store), self.n_actions)

        values = np.zeros(len(self.store), dtype=np.float64)
        for i in range(1, self.params.max_iters + 1):
            action_values = self._action_values(kernels, q_theta, values)
            best = action_values.max(axis=1)
            new_values = np.where(np.isfinite(best), best, 0.0)
            delta = float(np.max(np.abs(new_values - values)))
            self.deltas.append(delta)
            values = new_values
            self.iterations = i
            if delta < self.params.convergence_tol:
                self.converged = True
                break

        self.values = values
        if not self.converged:
            logger.warning(
                f"KBRL value iteration did not converge in {self.params.max_iters} iterations "
                f"(last delta {self.deltas[-1]:.3g})"
            )

    def weights(self, embedding: np.ndarray, action: int) -> tuple[np.ndarray, float]:
        """单个评估状态、单个动作的归一化权重 (数据权重, 伪状态权重)"""
        kern = self.kernel(embedding)[action]
        return kern.data_weights[0], float(kern.pseudo_weights[0])

    def q_values(self, embeddings: np.ndarray, observations: np.ndarray) -> np.ndarray:
        """
        批量估计 Q_NP(x, ·)

        Args:
            embeddings: (n, E) 查询嵌入
            observations: (n, obs_dim) 查询观测，用于伪状态上的 Q_θ

        Returns:
            (n, A)；某动作既无数据也无伪状态时为 -inf
        """
        x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        q_theta = np.asarray(self.q_function.q_values(observations), dtype=np.float64).reshape(x.shape[0], -1)
        return self._action_values(self.kernel(x), q_theta, self.values)


def kbrl_plan(
    store: TransitionStore,
    params: KernelParams,
    q_function: QFunction,
    gamma: float,
    query_embedding: np.ndarray,
    query_observation: np.ndarray,
    query_action: int,
) -> KBRLResult:
    """
    估计单个 (状态, 动作) 的 KBRL 值

    Raises:
        NoInformationError: 查询动作的存储为空且 C = 0
    """
    if not 0 <= query_action < q_function.n_actions:
        raise ValueError(f"action {query_action} outside [0, {q_function.n_actions})")
    if store.indices_for(query_action).size == 0 and params.pseudo_similarity == 0:
        raise NoInformationError(f"no stored transitions for action {query_action} and C = 0")

    planner = KBRLPlanner(store, params, q_function, gamma)
    observation = np.asarray(query_observation)[None, ...]
    value = planner.q_values(np.asarray(query_embedding)[None, :], observation)[0, query_action]
    if not np.isfinite(value):
        raise NoInformationError(f"no similar stored states for action {query_action} and C = 0")
    return KBRLResult(value=float(value), converged=planner.converged, iterations=planner.iterations)


def kbrl_trace(
    slices: Sequence[TrajectorySlice],
    q_function: QFunction,
    gamma: float,
    params: KernelParams,
) -> list[QTable]:
    """对全部检索轨迹联合运行 KBRL，返回每条轨迹上每一步的 Q_NP"""
    slices = [s for s in slices if len(s)]
    if not slices:
        return []
    planner = KBRLPlanner(TransitionStore.from_slices(slices, q_function), params, q_function, gamma)
    tables = []
    for traj in slices:
        q = planner.q_values(traj.embeddings, traj.observations)
        # 某动作无任何信息时退回 Q_θ
        fallback = np.asarray(q_function.q_values(traj.observations), dtype=np.float64).reshape(q.shape)
        q = np.where(np.isfinite(q), q, fallback)
        tables.append(QTable(q=q, v=q.max(axis=1)))
    return tables


TraceFunction = Callable[[TrajectorySlice, QFunction, float], QTable]

TRACE_FUNCTIONS: dict[str, TraceFunction] = {
    "nstep": nstep_trace,
    "tcp": tcp_trace,
}


def compute_traces(
    mode: str,
    slices: Sequence[TrajectorySlice],
    q_function: QFunction,
    gamma: float,
    kernel_params: KernelParams | None = None,
) -> list[QTable]:
    """
    按 trace_mode 计算全部检索轨迹的 Q_NP

    Args:
        mode: "nstep" / "tcp" / "kbrl"
        slices: 检索到的轨迹
        q_function: 用于自举与反事实动作的 Q_θ
        gamma: 折扣因子
        kernel_params: KBRL 参数（mode="kbrl" 时使用）

    Returns:
        与非空 slices 一一对应的 QTable 列表
    """
    if mode == "kbrl":
        return kbrl_trace(slices, q_function, gamma, kernel_params or KernelParams())
    if mode not in TRACE_FUNCTIONS:
        raise ValueError(f"Unknown trace mode '{mode}'. Available: {sorted([*TRACE_FUNCTIONS, 'kbrl'])}")
    trace = TRACE_FUNCTIONS[mode]
    return [trace(traj, q_function, gamma) for traj in slices if len(traj)]
