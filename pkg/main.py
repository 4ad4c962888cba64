"""
EVA 实验 - 主入口文件

子命令：
    train          训练（experiment.seeds 中的每个种子），写指标CSV、检查点与 summary.json
    eval-episode   冻结检查点上的单回合评估，比较不同 λ
    ablate-trace   nstep / tcp / kbrl 三种 trace computation 的对比训练
    sweep-lambda   不同 λ 的对比训练
    anneal         从检查点继续训练并把 λ 退火到基线值

成功退出码 0，任何错误记录日志后退出码 1。
"""

import argparse
import logging
import sys
from pathlib import Path

from core.config import PRESETS, ConfigManager, initialize_config
from core.experiment import ExperimentRunner


logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).parent / "config" / "default.yaml"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eva",
        description="DQN with decision-time value adjustments on the coin-collection gridworld",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None,
                        help=f"YAML config file (default: {DEFAULT_CONFIG.relative_to(Path(__file__).parent)} if present)")
    common.add_argument("--preset", type=str, default=None, choices=sorted(PRESETS),
                        help="Preset applied on top of the config file")
    common.add_argument("--seed", type=int, default=None, help="Base random seed")
    common.add_argument("--out", type=str, default=None, help="Output directory")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="Train the agent")

    eval_parser = sub.add_parser("eval-episode", parents=[common], help="Single-episode evaluation of a checkpoint")
    eval_parser.add_argument("--checkpoint", type=str, required=True)
    eval_parser.add_argument("--episodes", type=int, default=None)
    eval_parser.add_argument("--lambdas", type=float, nargs="+", default=None)

    sub.add_parser("ablate-trace", parents=[common], help="Compare nstep / tcp / kbrl trace computation")

    sweep_parser = sub.add_parser("sweep-lambda", parents=[common], help="Train one run group per lambda")
    sweep_parser.add_argument("--lambdas", type=float, nargs="+", default=None)

    anneal_parser = sub.add_parser("anneal", parents=[common], help="Continue training while annealing lambda")
    anneal_parser.add_argument("--checkpoint", type=str, required=True)
    anneal_parser.add_argument("--horizon", type=int, default=None)
    return parser


def load_config(args: argparse.Namespace) -> ConfigManager:
    """按命令行参数加载配置；--seed / --out 作为最高优先级覆盖项"""
    overrides: dict = {}
    if args.seed is not None:
        overrides.setdefault("experiment", {})["seed"] = args.seed
    if args.out is not None:
        overrides.setdefault("experiment", {})["output_dir"] = args.out

    config_path = args.config
    if config_path is None and DEFAULT_CONFIG.exists():
        config_path = DEFAULT_CONFIG
    if config_path is None:
        logger.warning("No config file given and no default found, using built-in defaults")
    return initialize_config(config_path, preset=args.preset, overrides=overrides)


def _configure_logging(config_manager: ConfigManager) -> None:
    """配置日志系统"""
    system_config = config_manager.get_system_config()
    logging.basicConfig(
        level=system_config.log_level,
        format=system_config.log_format,
        force=True,
    )


def dispatch(args: argparse.Namespace, runner: ExperimentRunner) -> None:
    if args.command == "train":
        runner.run_seeds("train")
    elif args.command == "eval-episode":
        rows = runner.run_single_episode_eval(args.checkpoint, lambdas=args.lambdas, episodes=args.episodes)
        logger.info("=" * 60)
        for row in rows:
            logger.info(f"lambda={row.mixing_lambda:<5} mean={row.mean_return:.4f} stderr={row.stderr:.4f}")
        logger.info("=" * 60)
    elif args.command == "ablate-trace":
        runner.run_trace_ablation()
    elif args.command == "sweep-lambda":
        runner.run_lambda_sweep(args.lambdas)
    elif args.command == "anneal":
        runner.run_anneal(args.checkpoint, horizon=args.horizon)
    else:
        raise ValueError(f"Unsupported command: {args.command}")


def main(argv: list[str] | None = None) -> int:
    """解析参数并运行子命令，返回退出码"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO)

    try:
        config_manager = load_config(args)
        _configure_logging(config_manager)

        logger.info("=" * 60)
        logger.info(f"EVA {args.command} (preset={config_manager.get_experiment_config().preset})")
        logger.info("=" * 60)

        runner = ExperimentRunner(config_manager.app_config)
        dispatch(args, runner)
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return 1
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        return 1
    return 0


def run() -> None:
    """控制台脚本入口"""
    sys.exit(main())


if __name__ == "__main__":
    run()
