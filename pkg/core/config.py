"""
配置管理模块

功能：
- 从YAML文件加载Agent与实验配置
- 预设（preset）覆盖，支持命令行再覆盖
- 类型安全的配置访问
- 验证配置完整性

YAML 中 agent section 使用超参数短名（lambda / T / M / k，通过pydantic别名），
Python代码中使用描述性的字段名。
"""

import copy
import logging
from enum import Enum
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, Field, field_validator


logger = logging.getLogger(__name__)


class TraceMode(str, Enum):
    """Trace computation 算法"""
    NSTEP = "nstep"  # 仅在轨迹上回传 n-step 回报
    TCP = "tcp"      # 每一步做策略改进，反事实动作用参数化估计
    KBRL = "kbrl"    # 带吸收伪状态的核方法值迭代


class MixingConvention(str, Enum):
    """λ 的混合方向"""
    NONPARAMETRIC = "nonparametric"  # Q_EVA = (1-λ)Q_θ + λQ_NP，λ=0 即 DQN 基线
    PARAMETRIC = "parametric"        # Q_EVA = λQ_θ + (1-λ)Q_NP，λ=1 即 DQN 基线


class ObservationMode(str, Enum):
    """环境观测编码"""
    SYMBOLIC = "symbolic"  # agent / coins / walls 三个二值平面
    RGB = "rgb"            # 归一化后的RGB渲染


class SystemConfigModel(BaseModel):
    """系统级配置"""
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="%(asctime)s - %(name)s - %(levelname)s - %(message)s")


class KernelConfigModel(BaseModel):
    """KBRL 核参数"""
    bandwidth: float = Field(default=1e-4, gt=0.0, description="高斯核长度尺度 b")
    pseudo_similarity: float = Field(default=1e-2, ge=0.0, description="伪状态的未归一化相似度 C")
    max_iters: int = Field(default=50, gt=0)
    convergence_tol: float = Field(default=1e-6, gt=0.0)


class AgentConfigModel(BaseModel):
    """
    EVA Agent配置

    规模相关的默认值按网格世界缩小
    （回放容量 50K，热身 5K）。
    """
    mixing_lambda: float = Field(default=0.4, ge=0.0, le=1.0, alias="lambda")
    mixing_convention: MixingConvention = Field(default=MixingConvention.NONPARAMETRIC)
    gamma: float = Field(default=0.99, ge=0.0, le=1.0)

    # 规划
    insert_period: int = Field(default=20, ge=1)
    rollout_length: int = Field(default=50, ge=1, alias="T")
    planning_neighbours: int = Field(default=10, ge=1, alias="M")
    value_neighbours: int = Field(default=5, ge=1, alias="k")
    temperature: float = Field(default=1e-5, ge=0.0)
    trace_mode: TraceMode = Field(default=TraceMode.TCP)
    planning_enabled: bool = Field(default=True)
    eva_after_buffer_full: bool = Field(default=False)
    kernel: KernelConfigModel = Field(default_factory=KernelConfigModel)
    kbrl_use_target_network: bool = Field(default=False)

    # 训练
    learning_rate: float = Field(default=1e-4, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(default=1e-8, gt=0.0)
    training_batch_size: int = Field(default=48, ge=1)
    replay_buffer_capacity: int = Field(default=50_000, ge=1)
    value_buffer_size: int = Field(default=2000, ge=1)
    target_network_period: int = Field(default=50, ge=1)
    no_training_period: int = Field(default=5000, ge=0)
    train_period: int = Field(default=4, ge=1)
    number_of_parallel_environments: int = Field(default=1, ge=1)

    # 网络结构
    number_of_fully_connected_activations: list[int] = Field(default_factory=lambda: [256])
    embedding_dim: int = Field(default=64, ge=1)
    # 卷积编码器参数（网格世界用MLP，这里只做记录）
    filter_sizes: list[int] = Field(default_factory=lambda: [8, 4, 3])
    filter_strides: list[int] = Field(default_factory=lambda: [4, 2, 1])
    channels: list[int] = Field(default_factory=lambda: [16, 32, 32])

    # 探索
    epsilon_start: float = Field(default=1.0, ge=0.0, le=1.0)
    epsilon_end: float = Field(default=0.01, ge=0.0, le=1.0)
    epsilon_decay_steps: int | None = Field(default=None, ge=0)  # None 表示等于热身步数
    eval_epsilon: float = Field(default=0.05, ge=0.0, le=1.0)

    lambda_anneal_steps: int | None = Field(default=None, ge=0)

    class Config:
        populate_by_name = True
        use_enum_values = True

    @field_validator("number_of_fully_connected_activations")
    @classmethod
    def validate_hidden_sizes(cls, v: list[int]) -> list[int]:
        """隐藏层宽度必须为正"""
        if any(size <= 0 for size in v):
            raise ValueError("hidden layer sizes must be positive")
        return v

    @property
    def epsilon_horizon(self) -> int:
        """ε 线性衰减的步数"""
        if self.epsilon_decay_steps is None:
            return self.no_training_period
        return self.epsilon_decay_steps


class ExperimentConfigModel(BaseModel):
    """实验配置"""
    preset: str = Field(default="one_coin")
    n_coins: int = Field(default=1, ge=1)
    max_episode_steps: int = Field(default=500, ge=1)
    map_path: str | None = Field(default=None)
    observation_mode: ObservationMode = Field(default=ObservationMode.SYMBOLIC)

    total_steps: int = Field(default=300_000, ge=1)
    eval_cadence: int = Field(default=5000, ge=1)
    metrics_window: int = Field(default=100, ge=1)
    seed: int = Field(default=0, ge=0)
    num_seeds: int = Field(default=1, ge=1)
    output_dir: str = Field(default="runs")
    save_value_buffer: bool = Field(default=False)

    # 评估协议
    eval_episodes: int = Field(default=200, ge=1)
    eval_lambdas: list[float] = Field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6])
    sweep_lambdas: list[float] = Field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6])
    anneal_steps: int = Field(default=50_000, ge=0)

    class Config:
        use_enum_values = True

    @field_validator("eval_lambdas", "sweep_lambdas")
    @classmethod
    def validate_lambdas(cls, v: list[float]) -> list[float]:
        """λ 取值必须在 [0, 1]"""
        if not v:
            raise ValueError("lambda list must not be empty")
        if any(not 0.0 <= lam <= 1.0 for lam in v):
            raise ValueError("lambda values must lie in [0, 1]")
        return v

    @property
    def seeds(self) -> list[int]:
        """本次实验使用的全部随机种子"""
        return [self.seed + i for i in range(self.num_seeds)]


class AppConfigModel(BaseModel):
    """应用总配置模型"""
    system: SystemConfigModel = Field(default_factory=SystemConfigModel)
    agent: AgentConfigModel = Field(default_factory=AgentConfigModel)
    experiment: ExperimentConfigModel = Field(default_factory=ExperimentConfigModel)

    def model_post_init(self, __context):
        """验证跨section的约束"""
        if self.experiment.total_steps < self.agent.no_training_period:
            raise ValueError(
                f"total_steps ({self.experiment.total_steps}) must be >= "
                f"no_training_period ({self.agent.no_training_period})"
            )


# 预设只写覆盖项；agent section 中使用超参数短名（别名）
PRESETS: dict[str, dict[str, Any]] = {
    "one_coin": {},
    "two_coins": {
        "experiment": {"preset": "two_coins", "n_coins": 2, "total_steps": 1_000_000},
    },
    "lambda_sweep": {
        "experiment": {"preset": "lambda_sweep", "sweep_lambdas": [0.0, 0.2, 0.4, 0.6]},
    },
    "trace_ablation": {
        "agent": {"kernel": {"bandwidth": 1e-4, "pseudo_similarity": 1e-2}},
        "experiment": {"preset": "trace_ablation", "num_seeds": 3},
    },
    "anneal": {
        "experiment": {"preset": "anneal", "anneal_steps": 50_000},
    },
    "single_episode": {
        "experiment": {"preset": "single_episode", "eval_episodes": 200,
                       "eval_lambdas": [0.0, 0.2, 0.4]},
    },
    "smoke": {
        "agent": {
            "replay_buffer_capacity": 500,
            "value_buffer_size": 200,
            "no_training_period": 100,
            "training_batch_size": 8,
            "insert_period": 5,
            "M": 3,
            "T": 10,
            "number_of_fully_connected_activations": [32],
            "embedding_dim": 16,
            "learning_rate": 1e-3,
        },
        "experiment": {
            "preset": "smoke",
            "total_steps": 400,
            "eval_cadence": 100,
            "eval_episodes": 3,
            "anneal_steps": 100,
            "max_episode_steps": 60,
        },
    },
}


def merge_overrides(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """
    递归合并配置字典（overrides 优先），不修改输入

    Args:
        base: 基础配置
        overrides: 覆盖项

    Returns:
        合并后的新字典
    """
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_overrides(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ConfigManager:
    """
    配置管理器

    使用示例:
        # 从文件加载，并应用预设
        config = ConfigManager.load_from_file("config/default.yaml", preset="two_coins")

        # 只用预设
        config = ConfigManager.from_preset("smoke")

        agent_cfg = config.get_agent_config()
        experiment_cfg = config.get_experiment_config()
    """

    def __init__(self, config: AppConfigModel):
        self._config = config
        logger.info(
            f"Loaded configuration (preset={config.experiment.preset}, "
            f"trace_mode={config.agent.trace_mode}, lambda={config.agent.mixing_lambda})"
        )

    @classmethod
    def load_from_file(
        cls,
        config_path: str | Path,
        preset: str | None = None,
        overrides: dict[str, Any] | None = None,
    ) -> "ConfigManager":
        """
        从YAML文件加载配置

        Args:
            config_path: 配置文件路径
            preset: 预设名称（可选）
            overrides: 额外覆盖项（可选，优先级最高）

        Returns:
            ConfigManager实例

        Raises:
            FileNotFoundError: 配置文件不存在
            ValueError: 配置验证失败
        """
        config_path = Path(config_path)

        if not config_path.exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")

        with open(config_path, 'r', encoding='utf-8') as f:
            raw_config = yaml.safe_load(f) or {}

        manager = cls.load_from_dict(raw_config, preset=preset, overrides=overrides)
        logger.info(f"Successfully loaded config from {config_path}")
        return manager

    @classmethod
    def load_from_dict(
        cls,
        config_dict: dict,
        preset: str | None = None,
        overrides: dict[str, Any] | None = None,
    ) -> "ConfigManager":
        """
        从字典加载配置（也用于测试）

        Args:
            config_dict: 配置字典
            preset: 预设名称（可选）
            overrides: 额外覆盖项（可选）

        Returns:
            ConfigManager实例
        """
        raw = dict(config_dict)
        if preset is not None:
            if preset not in PRESETS:
                raise ValueError(f"Unknown preset '{preset}'. Available: {sorted(PRESETS)}")
            raw = merge_overrides(raw, PRESETS[preset])
        if overrides:
            raw = merge_overrides(raw, overrides)

        try:
            config = AppConfigModel(**raw)
        except Exception as e:
            logger.error(f"Failed to validate config: {e}")
            raise ValueError(f"Invalid configuration: {e}") from e

        return cls(config)

    @classmethod
    def from_preset(cls, preset: str = "one_coin", overrides: dict[str, Any] | None = None) -> "ConfigManager":
        """只用默认值和预设构建配置"""
        return cls.load_from_dict({}, preset=preset, overrides=overrides)

    @property
    def app_config(self) -> AppConfigModel:
        return self._config

    def get_system_config(self) -> SystemConfigModel:
        """获取系统配置"""
        return self._config.system

    def get_agent_config(self) -> AgentConfigModel:
        """获取Agent配置"""
        return self._config.agent

    def get_experiment_config(self) -> ExperimentConfigModel:
        """获取实验配置"""
        return self._config.experiment

    def to_dict(self) -> dict[str, Any]:
        """导出为字典（agent section 使用超参数短名）"""
        return self._config.model_dump(mode="json", by_alias=True)

    def dump_yaml(self) -> str:
        """导出为YAML文本"""
        return yaml.safe_dump(self.to_dict(), sort_keys=True, allow_unicode=True)


# 全局配置管理器实例
_config_manager: ConfigManager | None = None


def get_config_manager() -> ConfigManager:
    """
    获取全局配置管理器

    Returns:
        ConfigManager实例

    Raises:
        RuntimeError: 配置未初始化
    """
    if _config_manager is None:
        raise RuntimeError("Config manager not initialized. Call initialize_config() first.")
    return _config_manager


def initialize_config(
    config_path: str | Path | None = None,
    preset: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> ConfigManager:
    """
    初始化全局配置管理器

    Args:
        config_path: 配置文件路径（None 时只用默认值和预设）
        preset: 预设名称
        overrides: 额外覆盖项

    Returns:
        ConfigManager实例
    """
    global _config_manager
    if config_path is None:
        _config_manager = ConfigManager.load_from_dict({}, preset=preset, overrides=overrides)
    else:
        _config_manager = ConfigManager.load_from_file(config_path, preset=preset, overrides=overrides)
    logger.info("Global config manager initialized")
    return _config_manager


def is_config_initialized() -> bool:
    """检查配置是否已初始化"""
    return _config_manager is not None
