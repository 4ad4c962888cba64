"""
实验驱动

功能：
- run_training：训练Agent，按 eval_cadence 写指标CSV，结束时写检查点
- run_seeds：同一配置跑多个种子，写 summary.json（最终回报的均值与中位数）
- run_lambda_sweep / run_trace_ablation：只改变 λ 或 trace_mode 的多组训练
- run_single_episode_eval：冻结的预训练网络 + 回放缓冲区，比较不同 λ 的单回合回报
- run_anneal：从检查点继续训练，同时把 λ 退火到基线值

每个种子派生出互不相交的随机流（Agent、训练环境、评估环境），同一种子的运行逐位可复现。
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from agents.eva import EVAAgent, EVAAgentExecutor, create_eva_executor
from core.checkpoint import CheckpointData, checkpoint_load, checkpoint_save
from core.config import AgentConfigModel, AppConfigModel, ExperimentConfigModel, TraceMode
from core.errors import TrainingDivergenceError
from core.metrics import MetricsRow, MetricsWriter, final_return, read_metrics
from envs.coin_grid import CoinGridEnv, GridLayout


logger = logging.getLogger(__name__)

# SeedSequence 的流编号
AGENT_STREAM = 0
ENV_STREAM = 1
EVAL_STREAM = 2

TRACE_MODES = [mode.value for mode in TraceMode]


@dataclass
class RunResult:
    """一个种子的训练结果"""
    seed: int
    metrics_path: str
    checkpoint_path: str | None
    final_return: float | None
    env_steps: int
    diverged: bool = False
    error: str | None = None


@dataclass
class EvalRow:
    """单回合评估中一个 λ 的汇总"""
    mixing_lambda: float
    episodes: int
    mean_return: float
    stderr: float
    returns: list[float] = field(default_factory=list)


def summarize_returns(returns: list[float]) -> tuple[float, float]:
    """均值与标准误"""
    values = np.asarray(returns, dtype=np.float64)
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return mean, stderr


class ExperimentRunner:
    """
    实验驱动器

    使用示例:
        runner = ExperimentRunner(config_manager.app_config, output_dir="runs/demo")
        results = runner.run_seeds("train")
        rows = runner.run_single_episode_eval(results[0].checkpoint_path)
    """

    def __init__(self, config: AppConfigModel, output_dir: str | Path | None = None):
        """
        初始化实验驱动器

        Args:
            config: 应用配置
            output_dir: 输出目录（默认使用 experiment.output_dir）
        """
        self.config = config
        self.output_dir = Path(output_dir or config.experiment.output_dir)
        self._layout: GridLayout | None = None

    @property
    def layout(self) -> GridLayout:
        return self.layout_for(self.config.experiment)

    def layout_for(self, experiment: ExperimentConfigModel) -> GridLayout:
        """某个实验配置对应的地图；与本驱动器配置同一地图时复用缓存"""
        map_path = experiment.map_path
        if map_path != self.config.experiment.map_path:
            return GridLayout.load(map_path) if map_path else GridLayout()
        if self._layout is None:
            self._layout = GridLayout.load(map_path) if map_path else GridLayout()
        return self._layout

    # ------------------------------------------------------------------
    # 构建
    # ------------------------------------------------------------------

    def config_dict(self, agent_config: AgentConfigModel | None = None, seed: int | None = None) -> dict[str, Any]:
        """本次运行的完整配置（写入检查点）"""
        data = self.config.model_dump(mode="json", by_alias=True)
        if agent_config is not None:
            data["agent"] = agent_config.model_dump(mode="json", by_alias=True)
        if seed is not None:
            data["experiment"]["seed"] = seed
        return data

    def build_envs(
        self,
        seed: int,
        count: int | None = None,
        stream: int = ENV_STREAM,
        experiment: ExperimentConfigModel | None = None,
    ) -> list[CoinGridEnv]:
        """按种子构建环境列表，每个环境一个独立随机流"""
        exp = experiment or self.config.experiment
        count = count or self.config.agent.number_of_parallel_environments
        seqs = np.random.SeedSequence([seed, stream]).spawn(count)
        layout = self.layout_for(exp)
        return [
            CoinGridEnv(
                layout=layout,
                n_coins=exp.n_coins,
                max_episode_steps=exp.max_episode_steps,
                observation_mode=exp.observation_mode,
                seed=seq,
            )
            for seq in seqs
        ]

    def build_executor(self, seed: int, agent_config: AgentConfigModel | None = None) -> EVAAgentExecutor:
        agent_config = agent_config or self.config.agent
        envs = self.build_envs(seed, count=agent_config.number_of_parallel_environments)
        return create_eva_executor(agent_config, envs, seed=np.random.SeedSequence([seed, AGENT_STREAM]))

    def restore_executor(self, data: CheckpointData) -> tuple[EVAAgentExecutor, AppConfigModel]:
        """从检查点恢复Agent和（若保存了的话）环境状态"""
        app_config = AppConfigModel(**data.config)
        agent = EVAAgent.from_checkpoint(data, app_config.agent)
        envs = self.build_envs(
            app_config.experiment.seed,
            count=app_config.agent.number_of_parallel_environments,
            experiment=app_config.experiment,
        )
        executor = EVAAgentExecutor(agent, envs)
        if data.executor_state is not None:
            executor.set_state(data.executor_state)
        return executor, app_config

    # ------------------------------------------------------------------
    # 训练
    # ------------------------------------------------------------------

    def metrics_row(self, agent: EVAAgent) -> MetricsRow:
        stats = agent.stats
        return MetricsRow(
            env_step=stats.env_steps,
            episode_return=stats.recent_mean_return(self.config.experiment.metrics_window),
            loss=stats.last_loss,
            planning_count=stats.planning_calls,
            hit_rate=stats.hit_rate,
            mixing_lambda=agent.mixing_lambda,
            episodes=stats.episodes,
        )

    def drive(self, executor: EVAAgentExecutor, writer: MetricsWriter, stop_step: int) -> None:
        """推进到 stop_step 个环境步，每跨过一个 eval_cadence 写一行指标"""
        agent = executor.agent
        cadence = self.config.experiment.eval_cadence
        next_report = (agent.stats.env_steps // cadence + 1) * cadence
        while agent.stats.env_steps < stop_step:
            executor.tick()
            if agent.stats.env_steps >= next_report:
                row = self.metrics_row(agent)
                writer.write(row)
                logger.info(
                    f"step={row.env_step} return={row.episode_return} loss={row.loss} "
                    f"plans={row.planning_count} hit_rate={row.hit_rate:.3f} lambda={row.mixing_lambda:.3f}"
                )
                next_report = (agent.stats.env_steps // cadence + 1) * cadence

    def run_training(
        self,
        seed: int | None = None,
        out_dir: str | Path | None = None,
        agent_config: AgentConfigModel | None = None,
    ) -> Path:
        """
        训练一个种子

        Args:
            seed: 随机种子（默认 experiment.seed）
            out_dir: 输出目录（默认 self.output_dir）
            agent_config: 替换配置中的 agent section（λ sweep / trace 消融用）

        Returns:
            指标CSV路径；同目录下写 checkpoint_seed{seed}.eva

        Raises:
            TrainingDivergenceError: 训练损失非有限
        """
        exp = self.config.experiment
        seed = exp.seed if seed is None else seed
        agent_config = agent_config or self.config.agent
        out = Path(out_dir or self.output_dir)

        executor = self.build_executor(seed, agent_config)
        agent = executor.agent
        metrics_path = out / f"metrics_seed{seed}.csv"
        logger.info("=" * 60)
        logger.info(
            f"Training seed={seed} trace_mode={agent_config.trace_mode} lambda={agent_config.mixing_lambda} "
            f"steps={exp.total_steps} -> {metrics_path}"
        )
        logger.info("=" * 60)

        with MetricsWriter(metrics_path) as writer:
            try:
                self.drive(executor, writer, exp.total_steps)
            except TrainingDivergenceError as e:
                logger.error(
                    f"Training diverged at env step {agent.stats.env_steps} "
                    f"(seed={seed}, trace_mode={agent_config.trace_mode}, "
                    f"train_steps={agent.stats.train_steps}, last_loss={agent.stats.last_loss}): {e}"
                )
                raise

        checkpoint_save(
            out / f"checkpoint_seed{seed}.eva",
            agent.to_checkpoint(
                self.config_dict(agent_config, seed),
                include_value_buffer=exp.save_value_buffer,
                executor_state=executor.get_state(),
            ),
        )
        logger.info(f"Finished seed={seed}: {agent.stats.episodes} episodes, {agent.stats.train_steps} train steps")
        return metrics_path

    def run_seeds(self, name: str, agent_config: AgentConfigModel | None = None) -> list[RunResult]:
        """
        对 experiment.seeds 中的每个种子训练一次，并写 summary.json

        发散的种子记录为 diverged，不中断其余种子
        """
        out = self.output_dir / name
        results: list[RunResult] = []
        for seed in self.config.experiment.seeds:
            try:
                metrics_path = self.run_training(seed, out, agent_config)
            except TrainingDivergenceError as e:
                results.append(RunResult(
                    seed=seed,
                    metrics_path=str(out / f"metrics_seed{seed}.csv"),
                    checkpoint_path=None,
                    final_return=None,
                    env_steps=0,
                    diverged=True,
                    error=str(e),
                ))
                continue
            rows = read_metrics(metrics_path)
            results.append(RunResult(
                seed=seed,
                metrics_path=str(metrics_path),
                checkpoint_path=str(out / f"checkpoint_seed{seed}.eva"),
                final_return=final_return(rows),
                env_steps=rows[-1].env_step if rows else 0,
            ))
        self.write_summary(out / "summary.json", name, results)
        return results

    def write_summary(self, path: Path, name: str, results: list[RunResult]) -> dict[str, Any]:
        """写出多种子汇总（均值、中位数）"""
        finals = [r.final_return for r in results if r.final_return is not None]
        summary = {
            "name": name,
            "preset": self.config.experiment.preset,
            "seeds": [r.seed for r in results],
            "final_returns": finals,
            "mean_final_return": float(np.mean(finals)) if finals else None,
            "median_final_return": float(np.median(finals)) if finals else None,
            "diverged_seeds": [r.seed for r in results if r.diverged],
            "runs": [asdict(r) for r in results],
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
        logger.info(f"{name}: mean={summary['mean_final_return']} median={summary['median_final_return']} -> {path}")
        return summary

    def run_lambda_sweep(self, lambdas: list[float] | None = None) -> dict[float, list[RunResult]]:
        """对每个 λ 训练一组种子，其余配置不变"""
        lambdas = lambdas or self.config.experiment.sweep_lambdas
        results = {}
        for lam in lambdas:
            agent_config = self.config.agent.model_copy(update={"mixing_lambda": float(lam)})
            results[float(lam)] = self.run_seeds(f"lambda_{lam}", agent_config)
        return results

    def run_trace_ablation(self) -> dict[str, list[RunResult]]:
        """
        三种 trace computation 各训练一组种子（种子相同）

        nstep 可能发散，发散记录在 summary.json 里
        """
        results = {}
        for mode in TRACE_MODES:
            agent_config = self.config.agent.model_copy(update={"trace_mode": mode})
            results[mode] = self.run_seeds(f"trace_{mode}", agent_config)
            if mode == TraceMode.NSTEP.value and any(r.diverged for r in results[mode]):
                logger.warning("n-step trace computation diverged on at least one seed")
        return results

    # ------------------------------------------------------------------
    # 评估与巩固
    # ------------------------------------------------------------------

    def run_single_episode_eval(
        self,
        checkpoint_path: str | Path,
        lambdas: list[float] | None = None,
        episodes: int | None = None,
    ) -> list[EvalRow]:
        """
        冻结权重的单回合评估

        每个 λ 都从同一检查点重新加载（网络与回放缓冲区相同），
        评估环境按检查点中的实验配置（地图、金币数、回合上限）构建，使用相同的种子；
        λ 为基线值的一行即对照组。

        Raises:
            CheckpointError: 检查点缺少回放缓冲区等必需块
        """
        exp = self.config.experiment
        lambdas = lambdas or exp.eval_lambdas
        episodes = episodes or exp.eval_episodes
        data = checkpoint_load(checkpoint_path)
        app_config = AppConfigModel(**data.config)

        rows = []
        for lam in lambdas:
            agent = EVAAgent.from_checkpoint(data, app_config.agent)
            agent.set_lambda(float(lam))
            executor = EVAAgentExecutor(agent, self.build_envs(
                exp.seed, count=1, stream=EVAL_STREAM, experiment=app_config.experiment,
            ))
            executor.freeze()
            returns = executor.run_episodes(episodes)
            mean, stderr = summarize_returns(returns)
            rows.append(EvalRow(mixing_lambda=float(lam), episodes=episodes, mean_return=mean,
                                stderr=stderr, returns=returns))
            logger.info(f"lambda={lam}: mean return {mean:.4f} ± {stderr:.4f} over {episodes} episodes")

        self.write_eval_table(self.output_dir / "eval_episode.csv", rows)
        return rows

    def write_eval_table(self, path: Path, rows: list[EvalRow]) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["lambda,episodes,mean_return,stderr"]
        lines += [f"{r.mixing_lambda!r},{r.episodes},{r.mean_return!r},{r.stderr!r}" for r in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info(f"Wrote evaluation table to {path}")

    def run_anneal(
        self,
        checkpoint_path: str | Path,
        horizon: int | None = None,
        out_dir: str | Path | None = None,
    ) -> Path:
        """
        从检查点继续训练，λ 在 horizon 步内线性退火到基线值

        Returns:
            指标CSV路径；同目录写 anneal_summary.json 与 checkpoint_anneal.eva
        """
        horizon = self.config.experiment.anneal_steps if horizon is None else horizon
        out = Path(out_dir or self.output_dir)
        data = checkpoint_load(checkpoint_path)
        executor, app_config = self.restore_executor(data)
        agent = executor.agent
        window = self.config.experiment.metrics_window

        before = agent.stats.recent_mean_return(window)
        start_step = agent.stats.env_steps
        start_lambda = agent.mixing_lambda
        agent.set_lambda_schedule(horizon)

        metrics_path = out / "metrics_anneal.csv"
        with MetricsWriter(metrics_path) as writer:
            self.drive(executor, writer, start_step + horizon)
        after = agent.stats.recent_mean_return(window)

        summary = {
            "checkpoint": str(checkpoint_path),
            "horizon": horizon,
            "start_step": start_step,
            "start_lambda": start_lambda,
            "final_lambda": agent.mixing_lambda,
            "pre_anneal_return": before,
            "post_anneal_return": after,
        }
        (out / "anneal_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
        checkpoint_save(
            out / "checkpoint_anneal.eva",
            agent.to_checkpoint(
                self.config_dict(app_config.agent, app_config.experiment.seed),
                include_value_buffer=self.config.experiment.save_value_buffer,
                executor_state=executor.get_state(),
            ),
        )
        logger.info(f"Anneal finished: return {before} -> {after}, lambda {start_lambda} -> {agent.mixing_lambda}")
        return metrics_path
