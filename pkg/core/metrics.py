"""
训练指标CSV

文件先写表头，之后只追加；env_step 列严格递增。
"""

import csv
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path


logger = logging.getLogger(__name__)


@dataclass
class MetricsRow:
    """一行学习曲线数据"""
    env_step: int
    episode_return: float | None  # 最近若干回合的平均回报，尚无完成回合时为空
    loss: float | None
    planning_count: int
    hit_rate: float
    mixing_lambda: float
    episodes: int


COLUMNS = [f.name for f in fields(MetricsRow)]


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_optional_float(text: str) -> float | None:
    return None if text == "" else float(text)


class MetricsWriter:
    """
    追加写入的指标文件

    使用示例:
        with MetricsWriter(path) as writer:
            writer.write(row)
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(COLUMNS)
        self._file.flush()
        self.last_step: int | None = None
        self.rows_written = 0

    def write(self, row: MetricsRow) -> None:
        """
        追加一行

        Raises:
            ValueError: env_step 没有严格递增
        """
        if self.last_step is not None and row.env_step <= self.last_step:
            raise ValueError(f"env_step must increase: {row.env_step} after {self.last_step}")
        self._writer.writerow([_format(getattr(row, name)) for name in COLUMNS])
        self._file.flush()
        self.last_step = row.env_step
        self.rows_written += 1

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def read_metrics(path: str | Path) -> list[MetricsRow]:
    """
    一遍读取指标文件

    Raises:
        ValueError: 表头不符
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != COLUMNS:
            raise ValueError(f"unexpected metrics header in {path}: {header}")
        rows = []
        for record in reader:
            rows.append(MetricsRow(
                env_step=int(record[0]),
                episode_return=_parse_optional_float(record[1]),
                loss=_parse_optional_float(record[2]),
                planning_count=int(record[3]),
                hit_rate=float(record[4]),
                mixing_lambda=float(record[5]),
                episodes=int(record[6]),
            ))
    return rows


def final_return(rows: list[MetricsRow]) -> float | None:
    """最后一个有回报的行的平均回报"""
    for row in reversed(rows):
        if row.episode_return is not None and not math.isnan(row.episode_return):
            return row.episode_return
    return None


def steps_to_reach(rows: list[MetricsRow], threshold: float) -> int | None:
    """平均回报首次达到 threshold 的 env_step，从未达到时返回 None"""
    for row in rows:
        if row.episode_return is not None and row.episode_return >= threshold:
            return row.env_step
    return None
