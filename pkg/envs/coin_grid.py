"""
金币收集网格世界

5×13 的场地，智能体与金币随机放置，四个移动动作。
每步奖励 -0.01，收集到金币额外 +1；金币收完或达到步数上限时结束。
场地外视为墙；撞墙时原地不动。

地图可以从ASCII文件加载：'#' 为墙，'.' 为空地，每行一行格子。
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any

import numpy as np

from core.errors import EpisodeFinishedError


logger = logging.getLogger(__name__)

STEP_REWARD = -0.01
COIN_REWARD = 1.0
DEFAULT_HEIGHT = 5
DEFAULT_WIDTH = 13
DEFAULT_MAX_EPISODE_STEPS = 500

Position = tuple[int, int]

# 渲染配色
CYAN = (0, 255, 255)
YELLOW = (255, 255, 0)
PURPLE = (128, 0, 128)
WHITE = (255, 255, 255)


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1
    UP = 2
    DOWN = 3


ACTION_DELTAS: dict[Action, Position] = {
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
}


@dataclass(frozen=True)
class GridLayout:
    """
    场地布局

    walls 只记录场地内部的墙；场地边界之外一律不可通行。
    """
    height: int = DEFAULT_HEIGHT
    width: int = DEFAULT_WIDTH
    walls: frozenset[Position] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        for r, c in self.walls:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise ValueError(f"wall {(r, c)} lies outside the {self.height}x{self.width} grid")

    @classmethod
    def from_ascii(cls, text: str) -> "GridLayout":
        """
        解析ASCII地图

        Raises:
            ValueError: 行长度不一致或出现未知字符
        """
        rows = [line.rstrip("\r") for line in text.strip().splitlines() if line.strip()]
        if not rows:
            raise ValueError("map is empty")
        width = len(rows[0])
        walls = set()
        for r, line in enumerate(rows):
            if len(line) != width:
                raise ValueError(f"map row {r} has length {len(line)}, expected {width}")
            for c, ch in enumerate(line):
                if ch == "#":
                    walls.add((r, c))
                elif ch != ".":
                    raise ValueError(f"unknown map character {ch!r} at row {r}, column {c}")
        return cls(height=len(rows), width=width, walls=frozenset(walls))

    @classmethod
    def load(cls, path: str | Path) -> "GridLayout":
        """从文件加载ASCII地图"""
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Map file not found: {path}")
        layout = cls.from_ascii(path.read_text(encoding="utf-8"))
        logger.info(f"Loaded {layout.height}x{layout.width} map with {len(layout.walls)} walls from {path}")
        return layout

    def to_ascii(self) -> str:
        return "\n".join(
            "".join("#" if (r, c) in self.walls else "." for c in range(self.width))
            for r in range(self.height)
        )

    def is_free(self, pos: Position) -> bool:
        r, c = pos
        return 0 <= r < self.height and 0 <= c < self.width and pos not in self.walls

    @property
    def free_cells(self) -> list[Position]:
        """全部空地，按行优先排序"""
        return [(r, c) for r in range(self.height) for c in range(self.width) if (r, c) not in self.walls]

    @property
    def n_cells(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class GridState:
    """一个时刻的完整环境状态"""
    agent_pos: Position
    coin_positions: frozenset[Position]
    walls: frozenset[Position]
    steps_elapsed: int = 0

    @property
    def coins_remaining(self) -> int:
        return len(self.coin_positions)


def shortest_path_length(layout: GridLayout, start: Position, goal: Position) -> int | None:
    """BFS 最短路径步数，不可达时返回 None"""
    if not layout.is_free(start) or not layout.is_free(goal):
        return None
    frontier = deque([start])
    dist = {start: 0}
    while frontier:
        pos = frontier.popleft()
        if pos == goal:
            return dist[pos]
        for dr, dc in ACTION_DELTAS.values():
            nxt = (pos[0] + dr, pos[1] + dc)
            if layout.is_free(nxt) and nxt not in dist:
                dist[nxt] = dist[pos] + 1
                frontier.append(nxt)
    return None


def optimal_return(layout: GridLayout, state: GridState) -> float:
    """
    单金币任务的最优回报 1 - 0.01·d（d 为 BFS 最短距离）

    Raises:
        ValueError: 状态中不是恰好一枚金币，或金币不可达
    """
    if state.coins_remaining != 1:
        raise ValueError("optimal_return is defined for exactly one remaining coin")
    (coin,) = state.coin_positions
    d = shortest_path_length(layout, state.agent_pos, coin)
    if d is None:
        raise ValueError(f"coin at {coin} is unreachable from {state.agent_pos}")
    return COIN_REWARD + STEP_REWARD * d


class CoinGridEnv:
    """
    金币收集环境

    使用示例:
        env = CoinGridEnv(GridLayout(), n_coins=1, seed=0)
        obs = env.reset()
        obs, reward, done = env.step(Action.RIGHT)
    """

    def __init__(
        self,
        layout: GridLayout | None = None,
        n_coins: int = 1,
        max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS,
        observation_mode: str = "symbolic",
        seed: int | None = None,
    ):
        """
        初始化环境

        Args:
            layout: 场地布局（默认 5×13 无内墙）
            n_coins: 每回合金币数
            max_episode_steps: 回合步数上限
            observation_mode: "symbolic"（三平面 0/1）或 "rgb"（归一化渲染）
            seed: 放置用随机数种子
        """
        if n_coins < 1:
            raise ValueError(f"n_coins must be >= 1, got {n_coins}")
        if max_episode_steps < 1:
            raise ValueError(f"max_episode_steps must be >= 1, got {max_episode_steps}")
        if observation_mode not in ("symbolic", "rgb"):
            raise ValueError(f"Unknown observation mode '{observation_mode}'")
        self.layout = layout or GridLayout()
        self.n_coins = int(n_coins)
        self.max_episode_steps = int(max_episode_steps)
        self.observation_mode = observation_mode
        self.rng = np.random.default_rng(seed)
        self._free = self.layout.free_cells

        self.state: GridState | None = None
        self.done = True
        self.terminated = False

    @property
    def n_actions(self) -> int:
        return len(Action)

    @property
    def obs_dim(self) -> int:
        return 3 * self.layout.n_cells

    def reset(self, rng: np.random.Generator | None = None, n_coins: int | None = None) -> np.ndarray:
        """
        开始新回合，智能体与金币放在互不相同的空地上

        Args:
            rng: 放置用随机数生成器（默认使用环境自带的）
            n_coins: 本回合金币数（默认使用构造参数）

        Raises:
            ValueError: 空地不足以放下智能体和全部金币
        """
        rng = rng if rng is not None else self.rng
        n_coins = self.n_coins if n_coins is None else int(n_coins)
        if n_coins < 1:
            raise ValueError(f"n_coins must be >= 1, got {n_coins}")
        if n_coins + 1 > len(self._free):
            raise ValueError(f"{n_coins} coins plus the agent do not fit into {len(self._free)} free cells")

        picks = rng.choice(len(self._free), size=n_coins + 1, replace=False)
        cells = [self._free[int(i)] for i in picks]
        self.state = GridState(
            agent_pos=cells[0],
            coin_positions=frozenset(cells[1:]),
            walls=self.layout.walls,
        )
        self.done = False
        self.terminated = False
        return self.observe()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        """
        执行一个动作

        Returns:
            (obs, reward, done)；done 为真时可通过 terminated 区分金币收完与步数截断

        Raises:
            EpisodeFinishedError: 回合已结束
        """
        if self.done or self.state is None:
            raise EpisodeFinishedError("step() called on a finished episode; call reset() first")
        action = Action(int(action))
        dr, dc = ACTION_DELTAS[action]
        r, c = self.state.agent_pos
        target = (r + dr, c + dc)
        pos = target if self.layout.is_free(target) else self.state.agent_pos

        reward = STEP_REWARD
        coins = self.state.coin_positions
        if pos in coins:
            coins = coins - {pos}
            reward += COIN_REWARD

        steps = self.state.steps_elapsed + 1
        self.state = GridState(agent_pos=pos, coin_positions=coins, walls=self.state.walls, steps_elapsed=steps)
        self.terminated = len(coins) == 0
        self.done = self.terminated or steps >= self.max_episode_steps
        return self.observe(), reward, self.done

    def symbolic_planes(self) -> np.ndarray:
        """(3, H, W) 的 0/1 平面：智能体、金币、墙"""
        planes = np.zeros((3, self.layout.height, self.layout.width), dtype=np.float32)
        r, c = self.state.agent_pos
        planes[0, r, c] = 1.0
        for r, c in self.state.coin_positions:
            planes[1, r, c] = 1.0
        for r, c in self.state.walls:
            planes[2, r, c] = 1.0
        return planes

    def render_rgb(self) -> np.ndarray:
        """(H, W, 3) uint8 图像：青色智能体、黄色金币、紫色墙、白色背景"""
        if self.state is None:
            raise RuntimeError("render_rgb() called before reset()")
        return render_state(self.layout, self.state)

    def observe(self) -> np.ndarray:
        """当前观测，展平为长度 3·H·W 的 float32 向量"""
        if self.observation_mode == "rgb":
            return (self.render_rgb().astype(np.float32) / 255.0).reshape(-1)
        return self.symbolic_planes().reshape(-1)

    # ------------------------------------------------------------------
    # 检查点
    # ------------------------------------------------------------------

    def get_state(self) -> dict[str, Any]:
        """导出可 JSON 序列化的环境状态（含随机数状态）"""
        state = None
        if self.state is not None:
            state = {
                "agent_pos": list(self.state.agent_pos),
                "coin_positions": sorted(list(p) for p in self.state.coin_positions),
                "steps_elapsed": self.state.steps_elapsed,
            }
        return {
            "state": state,
            "done": self.done,
            "terminated": self.terminated,
            "rng": self.rng.bit_generator.state,
        }

    def set_state(self, data: dict[str, Any]) -> None:
        """恢复 get_state() 导出的状态"""
        snapshot = data["state"]
        if snapshot is None:
            self.state = None
        else:
            self.state = GridState(
                agent_pos=tuple(snapshot["agent_pos"]),
                coin_positions=frozenset(tuple(p) for p in snapshot["coin_positions"]),
                walls=self.layout.walls,
                steps_elapsed=int(snapshot["steps_elapsed"]),
            )
        self.done = bool(data["done"])
        self.terminated = bool(data["terminated"])
        self.rng.bit_generator.state = data["rng"]


def render_state(layout: GridLayout, state: GridState) -> np.ndarray:
    """GridState 的纯函数渲染"""
    image = np.empty((layout.height, layout.width, 3), dtype=np.uint8)
    image[...] = WHITE
    for r, c in state.walls:
        image[r, c] = PURPLE
    for r, c in state.coin_positions:
        image[r, c] = YELLOW
    r, c = state.agent_pos
    image[r, c] = CYAN
    return image


def make_env(
    n_coins: int = 1,
    max_episode_steps: int = DEFAULT_MAX_EPISODE_STEPS,
    map_path: str | None = None,
    observation_mode: str = "symbolic",
    seed: int | None = None,
) -> CoinGridEnv:
    """按实验配置构建环境"""
    layout = GridLayout.load(map_path) if map_path else GridLayout()
    return CoinGridEnv(
        layout=layout,
        n_coins=n_coins,
        max_episode_steps=max_episode_steps,
        observation_mode=observation_mode,
        seed=seed,
    )
