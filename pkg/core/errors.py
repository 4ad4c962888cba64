"""
异常定义

所有异常同时继承对应的内置异常类型，调用方既可以捕获 EVAError，
也可以按 ValueError / KeyError / RuntimeError 捕获
"""


class EVAError(Exception):
    """EVA 异常基类"""


class DimensionError(EVAError, ValueError):
    """向量维度与索引/缓冲区配置不一致"""


class DuplicateIdError(EVAError, KeyError):
    """插入了已存在的ID"""


class DeadSlotError(EVAError, KeyError):
    """访问了未被占用的回放槽位"""


class EmptyTrajectoryError(EVAError, ValueError):
    """空轨迹无法进行trace计算"""


class ArchitectureMismatchError(EVAError, ValueError):
    """两个网络结构不一致"""


class TrainingDivergenceError(EVAError, RuntimeError):
    """训练损失出现 NaN/Inf"""


class NoInformationError(EVAError, ValueError):
    """KBRL 查询既没有相似数据也没有伪状态可用"""


class EpisodeFinishedError(EVAError, RuntimeError):
    """回合结束后继续 step"""


class CheckpointError(EVAError, ValueError):
    """检查点文件损坏、版本不符或包含未知块"""
