"""The five canned experiments and the seed-parallel harness that writes their reports."""

import logging
import pathlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.context import derive_seed
from ..core.errors import ConfigError, require
from .confidence import ece, fit_temperature
from .designer import (
    DesignCandidate,
    GenerativeDesignModel,
    SurrogateGrid,
    cem_design,
    early_discard,
    finetune_generative,
    geometric_confidence,
)
from .evaluator import filter_rank
from .loop import run_loop
from .reporting import ChartSpec, prepare_output, write_episodes, write_svg, write_table
from .toyworld import EnvSpec, ToolSpec, evaluate_robust, tool_reach

if TYPE_CHECKING:
    from ..core.config import Settings

logger = logging.getLogger(__name__)

EXPERIMENTS = ("e1", "e2", "e3", "e4", "e5")


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: Tuple[int, ...] = (1, 2, 3, 4, 5)
    sigma_grid: Tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    eval_trials: int = 100
    beta_arms: Tuple[float, ...] = (0.0, 0.5)
    candidates: int = 64
    calibration_samples: int = 2000
    calibration_trials: int = 1
    calibration_noise: float = 0.3
    calibration_spread: float = 0.6
    transfer_sticks: int = 300
    transfer_bend_spread: float = 0.3927
    predictor_sharpness: float = 0.02
    success_target: float = 0.8
    workers: int = 1

    def validate(self) -> "ExperimentConfig":
        require(len(self.seeds) >= 1, "experiment.seeds is empty", error=ConfigError)
        require(all(s >= 0 for s in self.sigma_grid), "experiment.sigma_grid must be >= 0", error=ConfigError)
        require(len(self.beta_arms) >= 1 and all(b >= 0 for b in self.beta_arms),
                "experiment.beta_arms must be non-empty and >= 0", error=ConfigError)
        require(self.eval_trials >= 1 and self.candidates >= 1, "experiment counts must be >= 1",
                error=ConfigError)
        require(self.calibration_samples >= 20 and self.calibration_trials >= 1,
                "experiment.calibration_samples must be >= 20", error=ConfigError)
        require(self.calibration_noise >= 0 and self.calibration_spread > 0 and self.predictor_sharpness > 0,
                "experiment calibration noise/sharpness out of range", error=ConfigError)
        require(self.transfer_sticks >= 1 and self.transfer_bend_spread > 0,
                "experiment.transfer_sticks/transfer_bend_spread must be positive", error=ConfigError)
        require(0 < self.success_target <= 1, "experiment.success_target must be in (0,1]", error=ConfigError)
        require(self.workers >= 1, "experiment.workers must be >= 1", error=ConfigError)
        return self


@dataclass
class SeedResult:
    seed: int
    rows: List[Dict[str, Any]]
    records: List[Dict[str, Any]] = field(default_factory=list)


COLUMNS: Dict[str, Tuple[str, ...]] = {
    "e1": ("experiment", "seed", "beta", "sigma", "success_rate", "mean_perf", "tool", "reach", "control"),
    "e2": ("experiment", "seed", "episode", "tool", "success_rate", "perceptual", "utility", "model", "control",
           "decision", "impasse", "trigger", "invented", "toolbox_size"),
    "e3": ("experiment", "seed", "method", "evaluations", "found", "valid", "candidates"),
    "e4": ("experiment", "seed", "samples", "temperature", "ece_before", "ece_after", "nll_before", "nll_after",
           "degenerate"),
    "e5": ("experiment", "seed", "arm", "iteration", "evaluations", "best_j", "best_success", "best_control", "mean_j",
           "kl_step", "eta", "c_eval", "first_target"),
}

CHARTS: Dict[str, ChartSpec] = {
    "e1": ChartSpec("success rate under object noise", "sigma", ("success_rate",), "beta"),
    "e2": ChartSpec("episode trace", "episode", ("success_rate", "decision", "model")),
    "e3": ChartSpec("evaluations to first success", "seed", ("evaluations",), "method"),
    "e4": ChartSpec("held-out calibration error", "seed", ("ece_before", "ece_after")),
    "e5": ChartSpec("fine-tuning progress", "evaluations", ("best_success",), "arm"),
}


def _env(settings: "Settings", seed: int, component: str, episode: int = 0, **overrides: Any) -> EnvSpec:
    env = replace(settings.env, seed=derive_seed(seed, component, episode))
    return replace(env, **overrides) if overrides else env


def robustness_sweep(settings: "Settings", seed: int) -> SeedResult:
    """Design at each beta arm, then measure success over the object-noise grid."""
    exp = settings.experiment
    task = settings.task("reach")
    rows = []
    for beta in exp.beta_arms:
        result = cem_design(task, _env(settings, seed, "e1-design"), settings.controller,
                            replace(settings.design, beta=beta), derive_seed(seed, f"e1-cem:{beta:g}"),
                            settings.world, settings.confidence)
        for sigma in exp.sigma_grid:
            env = _env(settings, seed, "e1-eval", object_noise=sigma, bend_noise=0.0, trials=exp.eval_trials)
            robust = evaluate_robust(result.tool, task, env, settings.world)
            rows.append({
                "experiment": "e1", "seed": seed, "beta": beta, "sigma": sigma,
                "success_rate": robust.success_rate, "mean_perf": robust.mean_perf,
                "tool": result.tool.id, "reach": tool_reach(result.tool), "control": result.score.control.value,
            })
    return SeedResult(seed, rows)


def impasse_trace(settings: "Settings", seed: int) -> SeedResult:
    """Closed loop on the hidden context; one row per episode."""
    _, records = run_loop(settings, seed)
    rows = []
    for rec in records:
        channels = rec["report"]["channels"]
        row = {
            "experiment": "e2", "seed": seed, "episode": rec["episode"], "tool": rec["tool"],
            "success_rate": rec["success_rate"], "impasse": rec["impasse"], "trigger": rec["trigger"],
            "invented": rec["invention"] is not None, "toolbox_size": len(rec["toolbox"]),
        }
        for name, score in channels.items():
            row[name] = None if score is None else score["value"]
        rows.append(row)
    return SeedResult(seed, rows, [dict(rec, seed=seed) for rec in records])


def sample_candidates(settings: "Settings", seed: int, count: int, component: str,
                      kind: str = "pull") -> List[DesignCandidate]:
    """Broad generative samples, screened by early discard and scored by geometry."""
    world = settings.world
    task = settings.task(kind)
    rng = np.random.default_rng(derive_seed(seed, component))
    tools = GenerativeDesignModel.broad(world).sample(rng, count, world)
    floors = [settings.evaluator.checkpoint_floor]
    out = []
    for i, tool in enumerate(tools):
        check = early_discard(tool, task, floors, world)
        raw = geometric_confidence(tool, task, world, settings.experiment.predictor_sharpness)
        out.append(DesignCandidate(tool, raw, raw, valid=check.proceed,
                                   violation=None if check.proceed else check.reason, index=i))
    return out


def _evaluations_to_success(order: Sequence[ToolSpec], settings: "Settings", env: EnvSpec,
                            cache: Dict[str, float]) -> Tuple[int, bool]:
    task = settings.task("pull")
    for n, tool in enumerate(order, start=1):
        if tool.id not in cache:
            cache[tool.id] = evaluate_robust(tool, task, env, settings.world).success_rate
        if cache[tool.id] >= settings.experiment.success_target:
            return n, True
    return len(order), False


def ranking_efficiency(settings: "Settings", seed: int) -> SeedResult:
    """Evaluations until the first successful design: confidence ranking vs generation order."""
    candidates = sample_candidates(settings, seed, settings.experiment.candidates, "e3")
    env = _env(settings, seed, "e3-eval")
    ranked = filter_rank(candidates, settings.evaluator.calibration, len(candidates))
    cache: Dict[str, float] = {}
    rows = []
    for method, order in (("exhaustive", [c.tool for c in candidates]), ("ranked", [c.tool for c in ranked])):
        n, found = _evaluations_to_success(order, settings, env, cache)
        rows.append({
            "experiment": "e3", "seed": seed, "method": method, "evaluations": n, "found": found,
            "valid": len(ranked), "candidates": len(candidates),
        })
    return SeedResult(seed, rows)


def calibration_study(settings: "Settings", seed: int) -> SeedResult:
    """Fit a temperature on the first half of geometric predictions and compare held-out ECE.

    Each sampled design faces a reach object placed at its nominal reach limit
    plus a uniform offset in +/- ``calibration_spread``; the geometric prediction
    is a sharp step there while object noise makes the outcome a gradual one.
    """
    exp = settings.experiment
    world = settings.world
    task = settings.task("reach")
    rng = np.random.default_rng(derive_seed(seed, "e4"))
    tools = GenerativeDesignModel.broad(world).sample(rng, exp.calibration_samples, world)
    offsets = rng.uniform(-exp.calibration_spread, exp.calibration_spread, size=len(tools))
    samples = []
    for i, (tool, offset) in enumerate(zip(tools, offsets)):
        placed = replace(task, target=(task.reach_radius + tool_reach(tool) + float(offset), 0.0))
        stated = geometric_confidence(tool, placed, world, exp.predictor_sharpness)
        env = _env(settings, seed, "e4-trial", i, object_noise=exp.calibration_noise,
                   trials=exp.calibration_trials)
        robust = evaluate_robust(tool, placed, env, world)
        samples.append((stated, robust.success_rate >= 0.5))
    half = len(samples) // 2
    model = fit_temperature(samples[:half], settings.ece_bins)
    held = samples[half:]
    row = {
        "experiment": "e4", "seed": seed, "samples": len(samples), "temperature": model.temperature,
        "ece_before": ece(held, settings.ece_bins),
        "ece_after": ece([(model.apply(c), s) for c, s in held], settings.ece_bins),
        "nll_before": model.nll_before, "nll_after": model.nll_after, "degenerate": model.degenerate,
    }
    return SeedResult(seed, [row])


def transfer_start(settings: "Settings", seed: int) -> Tuple[GenerativeDesignModel, SurrogateGrid]:
    """Designer state carried over from the reach context.

    The surrogate has scored ``transfer_sticks`` straight tools, spread over the
    length budget, on the reach task. The model keeps the broad length spread
    and centres every bend on zero with ``transfer_bend_spread``.
    """
    world, exp = settings.world, settings.experiment
    n = world.max_segments
    surrogate = SurrogateGrid.build(world, settings.finetune.surrogate_bins, settings.confidence.reward_bins)
    task = settings.task("reach")
    env = _env(settings, seed, "e5-transfer")
    for length in np.linspace(0.0, world.length_budget, exp.transfer_sticks + 1)[1:]:
        stick = ToolSpec.from_params(np.concatenate([np.full(n, length / n), np.zeros(n)]), world)
        surrogate.update(stick.to_params(n), evaluate_robust(stick, task, env, world).mean_reward)
    broad = GenerativeDesignModel.broad(world)
    model = GenerativeDesignModel(np.concatenate([broad.mean[:n], np.zeros(n)]),
                                  np.concatenate([broad.std[:n], np.full(n, exp.transfer_bend_spread)]))
    return model, surrogate


def exploration_ablation(settings: "Settings", seed: int) -> SeedResult:
    """Fine-tune for the pull with and without the epistemic acquisition bonus from the same start."""
    ft = settings.finetune
    task = settings.task("pull")
    env = _env(settings, seed, "e5-eval")
    start, surrogate = transfer_start(settings, seed)
    rows = []
    for arm in (ft.exploration, 0.0):
        result = finetune_generative(start, surrogate.copy(), task, env, settings.controller, ft.budget,
                                     replace(ft, exploration=arm), derive_seed(seed, "e5"), settings.world,
                                     settings.evaluator.calibration, settings.confidence)
        for step in result.trace:
            rows.append(dict(step, experiment="e5", seed=seed, arm=arm, first_target=result.first_target_evaluation))
    return SeedResult(seed, rows)


RUNNERS: Dict[str, Callable[["Settings", int], SeedResult]] = {
    "e1": robustness_sweep,
    "e2": impasse_trace,
    "e3": ranking_efficiency,
    "e4": calibration_study,
    "e5": exploration_ablation,
}


def _run_seed(exp_id: str, settings: "Settings", seed: int) -> SeedResult:
    logger.info("%s: seed %d", exp_id, seed)
    return RUNNERS[exp_id](settings, seed)


@dataclass
class ExperimentOutput:
    experiment: str
    directory: pathlib.Path
    rows: List[Dict[str, Any]]
    paths: List[pathlib.Path]


def run_experiment(exp_id: str, settings: "Settings", out_dir: pathlib.Path,
                   seeds: Optional[Sequence[int]] = None) -> ExperimentOutput:
    """Run ``exp_id`` for every seed and write per-seed and merged reports under ``out_dir/exp_id``."""
    if exp_id not in RUNNERS:
        raise ConfigError(f"unknown experiment {exp_id!r}; choose from {', '.join(EXPERIMENTS)}")
    seeds = tuple(seeds if seeds is not None else settings.experiment.seeds)
    require(len(seeds) >= 1, "no seeds to run", error=ConfigError)
    target = prepare_output(pathlib.Path(out_dir) / exp_id)

    workers = min(settings.experiment.workers, len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed, [exp_id] * len(seeds), [settings] * len(seeds), seeds))
    else:
        results = [_run_seed(exp_id, settings, s) for s in seeds]

    columns, chart = COLUMNS[exp_id], CHARTS[exp_id]
    paths: List[pathlib.Path] = []
    rows: List[Dict[str, Any]] = []
    for res in results:
        paths += write_table(target, f"seed-{res.seed}", res.rows, columns, chart)
        rows += res.rows
    paths += write_table(target, "summary", rows, columns)
    paths.append(write_svg(target / "plot.svg", rows, chart))
    records = [rec for res in results for rec in res.records]
    if records:
        paths.append(write_episodes(target / "episodes.jsonl", records))
    return ExperimentOutput(exp_id, target, rows, paths)

