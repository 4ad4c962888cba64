"""
环境模块

提供金币收集网格世界
"""

from envs.coin_grid import (
    Action,
    CoinGridEnv,
    GridLayout,
    GridState,
    make_env,
    optimal_return,
    render_state,
    shortest_path_length,
)

__all__ = [
    "Action",
    "CoinGridEnv",
    "GridLayout",
    "GridState",
    "make_env",
    "optimal_return",
    "render_state",
    "shortest_path_length",
]
