"""Metacognitive evaluator: confidence reports, tool selection and candidate filtering."""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError, require
from .confidence import (
    CalibrationModel,
    Channel,
    ChannelScales,
    ConfidenceReport,
    ConfidenceScore,
    DirichletParams,
    as_probvec,
    confidence_from_entropy,
    dirichlet_entropy,
    entropy_categorical,
    normalize,
    squash_to_confidence,
)
from .controller import (
    ControllerParams,
    bare_hand_entropy,
    control_confidence,
    tool_control_confidence,
)
from .designer import DesignCandidate, SurrogateGrid
from .discovery import WorldModel, model_confidence
from .toyworld import (
    AFFORDANCE_TEMPLATES,
    AFFORDANCES,
    EnvSpec,
    TaskSpec,
    ToolSpec,
    WorldLimits,
    _score,
    evaluate_robust,
    performance,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvaluatorConfig:
    beta_select: float = 0.5
    skip_threshold: float = 0.5
    lr_min: float = 0.5
    lr_max: float = 2.0
    checkpoint_floor: float = 0.5
    modulator_threshold: float = 0.5
    calibration: CalibrationModel = field(default_factory=CalibrationModel)

    def validate(self) -> "EvaluatorConfig":
        require(self.beta_select >= 0, "evaluator.beta_select must be >= 0", error=ConfigError)
        require(0 < self.skip_threshold < 1, "evaluator.skip_threshold must be in (0,1)", error=ConfigError)
        require(0 < self.lr_min <= self.lr_max, "evaluator needs 0 < lr_min <= lr_max", error=ConfigError)
        require(0 <= self.checkpoint_floor <= 1, "evaluator.checkpoint_floor must be in [0,1]", error=ConfigError)
        require(0 <= self.modulator_threshold <= 1, "evaluator.modulator_threshold must be in [0,1]",
                error=ConfigError)
        return self


def _categorical_score(channel: Channel, p: Any) -> ConfidenceScore:
    arr = as_probvec(p)
    h = entropy_categorical(arr)
    return ConfidenceScore(channel, h, confidence_from_entropy(min(h, np.log(arr.size)), arr.size))


def assemble_report(perceptual: Any = None, utility: Optional[DirichletParams] = None,
                    model: Optional[WorldModel] = None, precision: Any = None, q: Any = None, *,
                    model_scope: Optional[Sequence[Iterable[str]]] = None,
                    scales: ChannelScales = ChannelScales(), ctrl: Optional[ControllerParams] = None,
                    timestamp: int = 0) -> ConfidenceReport:
    """Fill exactly the channels whose inputs are given; the rest are marked ``not-provided``."""
    inputs = (perceptual, utility, model, precision, q)
    require(any(x is not None for x in inputs), "confidence report needs at least one channel input")
    report = ConfidenceReport(timestamp)

    if perceptual is not None:
        report.add(_categorical_score(Channel.PERCEPTUAL, perceptual))
    if utility is not None:
        h = dirichlet_entropy(utility)
        ref = dirichlet_entropy(DirichletParams.uniform(len(utility)))
        report.add(ConfidenceScore(Channel.UTILITY, h, squash_to_confidence(h, ref, scales.utility_scale)))
    if model is not None:
        report.add(model_confidence(model, model_scope or model.combos, scales.model_scale))
    if precision is not None:
        if scales.control_reference is not None:
            ref = scales.control_reference
        else:
            ref = bare_hand_entropy(ctrl or ControllerParams())
        report.add(control_confidence(precision, ref, scales.control_scale))
    if q is not None:
        report.add(_categorical_score(Channel.DECISION, q))

    for channel in Channel:
        report.mark_missing(channel, "not-provided")
    return report


def selection_order(perfs: Sequence[float], confs: Sequence[float], ids: Sequence[str],
                    beta: float) -> List[int]:
    """Indices by descending J = perf + beta * conf, equal J resolved by the smaller id."""
    require(len(perfs) == len(confs) == len(ids), "selection inputs differ in length")
    j = [float(p) + beta * float(c) for p, c in zip(perfs, confs)]
    return sorted(range(len(j)), key=lambda i: (-j[i], ids[i]))


@dataclass(frozen=True)
class ToolAssessment:
    tool: ToolSpec
    predicted: float
    success: float
    control: ConfidenceScore
    objective: float
    source: str

    @property
    def combined(self) -> float:
        return self.control.value * self.success

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tool": self.tool.id,
            "predicted": self.predicted,
            "success": self.success,
            "control": self.control.value,
            "objective": self.objective,
            "combined": self.combined,
            "source": self.source,
        }


@dataclass
class ToolSelection:
    choice: ToolSpec
    report: ConfidenceReport
    trigger: bool
    bypassed: bool
    assessments: List[ToolAssessment] = field(default_factory=list)


def select_tool(toolbox: Sequence[ToolSpec], task: TaskSpec, env: EnvSpec, ctrl: ControllerParams,
                cfg: EvaluatorConfig, *, limits: WorldLimits = WorldLimits(),
                scales: ChannelScales = ChannelScales(), surrogate: Optional[SurrogateGrid] = None,
                timestamp: int = 0) -> ToolSelection:
    """Pick the tool maximizing predicted performance plus weighted control confidence.

    When the most controllable tool is already confident enough the user block is
    bypassed: predictions come from ``surrogate`` (or the nominal pose search when
    there is none). Otherwise every tool runs through :func:`evaluate_robust`.
    """
    require(len(toolbox) >= 1, "toolbox is empty")
    cfg.validate()
    nominal = [performance(t, task, limits=limits) for t in toolbox]
    controls = [tool_control_confidence(t, ctrl, scales.control_scale, scales.control_reference, n.hand)
                for t, n in zip(toolbox, nominal)]
    bypass = max(c.value for c in controls) >= cfg.skip_threshold
    floor = float(_score(limits.reach_tolerance, task))

    predicted: List[float] = []
    success: List[float] = []
    for tool, nom in zip(toolbox, nominal):
        if bypass and surrogate is not None:
            theta = tool.to_params(limits.max_segments)
            predicted.append(surrogate.predicted_reward(theta))
            success.append(surrogate.success_probability(theta, floor))
        elif bypass:
            predicted.append(nom.reward)
            success.append(1.0 if nom.success else 0.0)
        else:
            robust = evaluate_robust(tool, task, env, limits)
            predicted.append(robust.mean_reward)
            success.append(robust.success_rate)
    source = ("surrogate" if surrogate is not None else "nominal") if bypass else "user"

    ids = [t.id for t in toolbox]
    order = selection_order(predicted, [c.value for c in controls], ids, cfg.beta_select)
    assessments = [
        ToolAssessment(t, p, s, c, p + cfg.beta_select * c.value, source)
        for t, p, s, c in zip(toolbox, predicted, success, controls)
    ]
    combined = np.array([a.combined for a in assessments])
    trigger = bool(np.all(combined < cfg.skip_threshold))
    q = normalize(combined) if combined.sum() > 0 else np.full(len(toolbox), 1.0 / len(toolbox))

    chosen = order[0]
    report = ConfidenceReport(timestamp)
    report.add(controls[chosen])
    report.add(_categorical_score(Channel.DECISION, q))
    for channel in Channel:
        report.mark_missing(channel, "not-evaluated")
    logger.debug("selected %s (J=%.4f, %s); trigger=%s", ids[chosen], assessments[chosen].objective, source, trigger)
    return ToolSelection(toolbox[chosen], report, trigger, bypass, assessments)


def filter_rank(candidates: Sequence[DesignCandidate], cal: CalibrationModel, top_k: int) -> List[DesignCandidate]:
    """Drop invalid designs, recalibrate, and rank by confidence, then shorter tool, then id."""
    require(top_k >= 1, "top_k must be >= 1")
    valid = [replace(c, confidence=cal.apply(c.raw_confidence)) for c in candidates if c.valid]
    valid.sort(key=lambda c: (-c.confidence, c.tool.total_length, c.tool.id))
    return valid[:top_k]


def adapt_learning_weight(report: ConfidenceReport, cfg: EvaluatorConfig) -> float:
    c_dec = report.value(Channel.DECISION)
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 - c_dec)


def bare_hand_modulator(ctrl: ControllerParams, threshold: float,
                        scales: ChannelScales = ChannelScales()) -> Tuple[ConfidenceScore, bool]:
    """Control confidence of the empty hand and whether it calls for a new strategy."""
    bare = ToolSpec((0.0,), (0.0,), id="bare-hand")
    score = tool_control_confidence(bare, ctrl, scales.control_scale, scales.control_reference)
    return score, score.value < threshold


def suggest_control_refinement(tool: ToolSpec, ctrl: ControllerParams, *, limits: WorldLimits = WorldLimits(),
                               scales: ChannelScales = ChannelScales()) -> List[Tuple[str, float]]:
    """Change in control confidence from appending each affordance template segment that still fits."""
    base = tool_control_confidence(tool, ctrl, scales.control_scale, scales.control_reference).value
    out: List[Tuple[str, float]] = []
    for tag in AFFORDANCES:
        frac, bend = AFFORDANCE_TEMPLATES[tag]
        grown = ToolSpec(tool.lengths + (frac * limits.max_length,), tool.bends + (bend,),
                         tool.affordances | {tag})
        if grown.violation(limits) is not None:
            continue
        value = tool_control_confidence(grown, ctrl, scales.control_scale, scales.control_reference).value
        out.append((tag, value - base))
    out.sort(key=lambda item: (-item[1], AFFORDANCES.index(item[0])))
    return out
