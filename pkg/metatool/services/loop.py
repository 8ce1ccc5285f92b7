"""Closed evaluator/designer/user loop over a hidden task context."""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.context import derive_seed
from ..core.errors import ConfigError, EpisodeError, MetatoolError, require
from ..types import FloatArray
from .confidence import Channel, ConfidenceReport, DirichletParams, as_probvec
from .designer import GenerativeDesignModel, cem_design, discover_tool
from .discovery import (
    SUCCESS,
    WorldModel,
    belief_update,
    impasse_detect,
    model_confidence,
    policy_posterior,
    record_outcome,
)
from .evaluator import adapt_learning_weight, assemble_report, select_tool
from .toyworld import (
    AFFORDANCES,
    EnvSpec,
    TaskSpec,
    ToolSpec,
    WorldLimits,
    combo_order,
    evaluate_robust,
    infer_affordances,
    template_tool,
)

if TYPE_CHECKING:
    from ..core.config import Settings

logger = logging.getLogger(__name__)

OUTCOMES = (SUCCESS, "failure")


@dataclass(frozen=True)
class LoopConfig:
    episodes: int = 12
    context: str = "pull"
    pretrain_trials: int = 20
    viability_floor: float = 0.2
    retention: int = 100
    discovery_max_size: int = 3
    toolbox: Tuple[ToolSpec, ...] = ()

    def validate(self, states: Sequence[str] = ()) -> "LoopConfig":
        require(self.episodes >= 1, "loop.episodes must be >= 1", error=ConfigError)
        require(not states or self.context in states, f"loop.context {self.context!r} has no task",
                error=ConfigError)
        require(self.pretrain_trials >= 0, "loop.pretrain_trials must be >= 0", error=ConfigError)
        require(0 <= self.viability_floor <= 1, "loop.viability_floor must be in [0,1]", error=ConfigError)
        require(self.retention >= 1, "loop.retention must be >= 1", error=ConfigError)
        require(1 <= self.discovery_max_size <= len(AFFORDANCES), "loop.discovery_max_size out of range",
                error=ConfigError)
        require(len(self.toolbox) >= 1, "loop.toolbox is empty", error=ConfigError)
        return self


@dataclass
class LoopState:
    toolbox: List[ToolSpec]
    model: WorldModel
    generative: GenerativeDesignModel
    belief: FloatArray
    history: List[ConfidenceReport] = field(default_factory=list)
    episode: int = 0
    last_invention: Optional[int] = None
    utility: Dict[str, FloatArray] = field(default_factory=dict)
    untried: Set[str] = field(default_factory=set)

    def reports_since_invention(self) -> List[ConfidenceReport]:
        if self.last_invention is None:
            return list(self.history)
        fresh = self.episode - self.last_invention
        return list(self.history[-fresh:]) if fresh > 0 else []

    def remember(self, report: ConfidenceReport, retention: int) -> None:
        self.history.append(report)
        del self.history[:-retention]


def pretrain_world_model(model: WorldModel, tasks: Mapping[str, TaskSpec], env: EnvSpec, trials: int,
                         seed: int, limits: WorldLimits = WorldLimits()) -> WorldModel:
    """Fill every (combination, context) cell with outcomes of its template tool."""
    if trials <= 0:
        return model
    for combo in model.combos:
        tool = template_tool(combo, limits)
        for state in model.states:
            trial_env = EnvSpec(env.object_noise, env.bend_noise, trials,
                                derive_seed(seed, f"pretrain:{tool.id}:{state}"))
            hits = evaluate_robust(tool, tasks[state], trial_env, limits).successes
            model.add_counts(combo, state, [hits, trials - hits])
    return model


def initial_state(settings: "Settings", seed: int) -> LoopState:
    cfg = settings.loop
    states = tuple(settings.tasks)
    model = WorldModel.over_affordances(states, OUTCOMES)
    pretrain_world_model(model, settings.tasks, settings.env, cfg.pretrain_trials, seed, settings.world)
    belief = np.full(len(states), 1.0 / len(states))
    return LoopState(list(cfg.toolbox), model, GenerativeDesignModel.broad(settings.world), belief)


def _utility_alpha(state: LoopState, tool: ToolSpec, bins: int) -> FloatArray:
    if tool.id not in state.utility:
        state.utility[tool.id] = np.ones(bins)
    return state.utility[tool.id]


def _viable(state: LoopState, floor: float) -> List[ToolSpec]:
    """Tools the world model expects to succeed; fresh inventions get one trial regardless."""
    viable = [t for t in state.toolbox
              if t.id in state.untried or state.model.success_probability(t.combo, state.belief) >= floor]
    return viable or list(state.toolbox)


def _invent(state: LoopState, settings: "Settings", task: TaskSpec, seed: int) -> Dict[str, Any]:
    cfg = settings.loop
    found = discover_tool(AFFORDANCES, state.belief, state.model, settings.policy, cfg.discovery_max_size,
                          settings.world)
    record: Dict[str, Any] = {
        "combo": list(found.combo),
        "discovery_confidence": found.confidence.value,
        "method": "discover",
    }
    tool = found.tool
    if found.confidence.value < settings.impasse.decision_threshold:
        design_env = EnvSpec(settings.env.object_noise, settings.env.bend_noise, settings.env.trials,
                             derive_seed(seed, "designer-env", state.episode))
        result = cem_design(task, design_env, settings.controller, settings.design,
                            derive_seed(seed, "designer", state.episode), settings.world, settings.confidence)
        tool = ToolSpec(result.tool.lengths, result.tool.bends, infer_affordances(result.tool, settings.world))
        state.generative = result.model
        record.update(method="cem", objective=result.score.objective, combo=list(tool.combo))
    if all(t.id != tool.id for t in state.toolbox):
        state.toolbox.append(tool)
        state.untried.add(tool.id)
    state.last_invention = state.episode
    record["tool"] = tool.to_dict()
    logger.info("episode %d: invented %s via %s", state.episode, tool.id, record["method"])
    return record


def run_episode(state: LoopState, settings: "Settings", seed: int) -> Dict[str, Any]:
    """One select/act/learn/monitor step; returns the episode record and advances ``state``."""
    episode = state.episode
    try:
        return _run_episode(state, settings, seed)
    except MetatoolError as exc:
        raise EpisodeError(episode, exc) from exc


def _run_episode(state: LoopState, settings: "Settings", seed: int) -> Dict[str, Any]:
    cfg = settings.loop
    task = settings.tasks[cfg.context]
    env = EnvSpec(settings.env.object_noise, settings.env.bend_noise, settings.env.trials,
                  derive_seed(seed, "user", state.episode))

    candidates = _viable(state, cfg.viability_floor)
    selection = select_tool(candidates, task, env, settings.controller, settings.evaluator,
                            limits=settings.world, scales=settings.confidence, timestamp=state.episode)
    tool = selection.choice
    combos = sorted({t.combo for t in candidates}, key=combo_order)
    posterior = policy_posterior(state.belief, combos, state.model, settings.policy)
    pre_report = assemble_report(q=posterior.q)
    lr = adapt_learning_weight(pre_report, settings.evaluator)

    robust = evaluate_robust(tool, task, env, settings.world)
    state.untried.discard(tool.id)
    alpha = _utility_alpha(state, tool, settings.confidence.reward_bins)
    for outcome in robust.outcomes:
        label = SUCCESS if outcome.success else OUTCOMES[1]
        state.belief, _ = belief_update(state.belief, tool.combo, label, state.model)
        record_outcome(state.model, tool.combo, state.belief, label, lr)
        alpha[min(int(outcome.reward * len(alpha)), len(alpha) - 1)] += 1.0

    posterior = policy_posterior(state.belief, combos, state.model, settings.policy)
    report = assemble_report(
        perceptual=state.belief,
        utility=DirichletParams(alpha),
        q=posterior.q,
        scales=settings.confidence,
        ctrl=settings.controller,
        timestamp=state.episode,
    )
    report.add(model_confidence(state.model, combos, settings.confidence.model_scale))
    report.add(selection.report.get(Channel.CONTROL))
    state.remember(report, cfg.retention)

    window = state.reports_since_invention()
    if len(window) >= settings.impasse.window:
        impasse = impasse_detect(window, settings.impasse)
        reason = impasse.reason.value
        stuck = impasse.flag
    else:
        reason, stuck = "warming-up", False

    invention = None
    if stuck:
        invention = _invent(state, settings, task, seed)

    record = {
        "episode": state.episode,
        "tool": tool.id,
        "combo": list(tool.combo),
        "success_rate": robust.success_rate,
        "mean_perf": robust.mean_perf,
        "trials": len(robust.outcomes),
        "learning_weight": lr,
        "belief": dict(zip(state.model.states, as_probvec(state.belief).tolist())),
        "report": report.to_dict(),
        "impasse": reason,
        "trigger": selection.trigger,
        "bypassed": selection.bypassed,
        "invention": invention,
        "toolbox": [t.id for t in state.toolbox],
    }
    state.episode += 1
    return record


def run_loop(settings: "Settings", seed: int, episodes: Optional[int] = None) -> Tuple[LoopState, List[Dict[str, Any]]]:
    state = initial_state(settings, seed)
    records = [run_episode(state, settings, seed) for _ in range(episodes or settings.loop.episodes)]
    return state, records
