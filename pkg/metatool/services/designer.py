"""Designer block: parameter-space tool design, affordance structure learning and
confidence-modulated fine-tuning of a generative design model."""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from ..core.errors import ConfigError, require
from ..types import Combo, FloatArray
from .confidence import (
    CalibrationModel,
    ChannelScales,
    ConfidenceScore,
    DirichletParams,
    epistemic_aleatoric_decompose,
)
from .controller import ControllerParams, tool_control_confidence
from .discovery import PolicyConfig, PolicyPosterior, WorldModel, enumerate_combos, policy_posterior
from .toyworld import (
    AFFORDANCES,
    EnvSpec,
    TaskSpec,
    ToolSpec,
    WorldLimits,
    _tip_vectors,
    canonical_combo,
    evaluate_robust,
    performance,
    template_tool,
    tool_reach,
)

logger = logging.getLogger(__name__)

KL_REFINEMENTS = 30


@dataclass(frozen=True)
class DesignConfig:
    """Cross-entropy-method settings; ``beta`` weighs control confidence against performance."""

    beta: float = 0.5
    population: int = 32
    elite_frac: float = 0.125
    iterations: int = 20
    noise_floor: float = 0.01
    prune_threshold: float = 3.0

    @property
    def elite_count(self) -> int:
        return int(math.ceil(self.elite_frac * self.population))

    def validate(self) -> "DesignConfig":
        require(self.beta >= 0, "design.beta must be >= 0", error=ConfigError)
        require(self.population >= 2, "design.population must be >= 2", error=ConfigError)
        require(0 < self.elite_frac <= 1, "design.elite_frac must be in (0, 1]", error=ConfigError)
        require(1 <= self.elite_count <= self.population, "elite count exceeds population", error=ConfigError)
        require(self.iterations >= 1, "design.iterations must be >= 1", error=ConfigError)
        require(self.noise_floor >= 0, "design.noise_floor must be >= 0", error=ConfigError)
        require(self.prune_threshold >= 0, "design.prune_threshold must be >= 0", error=ConfigError)
        return self


@dataclass(frozen=True)
class FinetuneConfig:
    eta_min: float = 0.1
    eta_max: float = 0.9
    kl_cap: float = 0.5
    exploration: float = 1.0
    weight_temperature: float = 0.2
    population: int = 32
    eval_fraction: float = 0.25
    budget: int = 160
    noise_floor: float = 0.01
    halt_confidence: float = 1.0
    surrogate_bins: int = 6
    success_target: float = 0.8

    def validate(self) -> "FinetuneConfig":
        require(0 <= self.eta_min <= self.eta_max < 1, "finetune needs 0 <= eta_min <= eta_max < 1",
                error=ConfigError)
        require(self.kl_cap >= 0 and self.exploration >= 0, "finetune.kl_cap/exploration must be >= 0",
                error=ConfigError)
        require(self.weight_temperature > 0, "finetune.weight_temperature must be > 0", error=ConfigError)
        require(self.population >= 2, "finetune.population must be >= 2", error=ConfigError)
        require(0 < self.eval_fraction <= 1, "finetune.eval_fraction must be in (0, 1]", error=ConfigError)
        require(self.noise_floor > 0, "finetune.noise_floor must be > 0", error=ConfigError)
        require(self.surrogate_bins >= 1, "finetune.surrogate_bins must be >= 1", error=ConfigError)
        return self


@dataclass
class GenerativeDesignModel:
    """Diagonal Gaussian over the (L_1..L_N, phi_1..phi_N) layout."""

    mean: FloatArray
    std: FloatArray

    def __post_init__(self) -> None:
        self.mean = np.array(self.mean, dtype=float)
        self.std = np.array(self.std, dtype=float)
        require(self.mean.shape == self.std.shape and self.mean.ndim == 1, "mean/std shape mismatch")
        require(bool(np.all(self.std > 0)), "generative std entries must be > 0")

    @classmethod
    def broad(cls, limits: WorldLimits) -> "GenerativeDesignModel":
        """Centre of the parameter box with a quarter-width spread."""
        lo, hi = limits.parameter_box()
        return cls(0.5 * (lo + hi), 0.25 * (hi - lo))

    def sample(self, rng: np.random.Generator, n: int, limits: WorldLimits) -> List[ToolSpec]:
        raw = self.mean + self.std * rng.standard_normal((n, self.mean.size))
        return [ToolSpec.from_params(theta, limits) for theta in raw]

    def copy(self) -> "GenerativeDesignModel":
        return GenerativeDesignModel(self.mean.copy(), self.std.copy())

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def kl_diag_gaussian(mu0: FloatArray, sd0: FloatArray, mu1: FloatArray, sd1: FloatArray) -> float:
    return float(np.sum(np.log(sd1 / sd0) + (sd0 ** 2 + (mu0 - mu1) ** 2) / (2.0 * sd1 ** 2) - 0.5))


def symmetric_kl(a: GenerativeDesignModel, b: GenerativeDesignModel) -> float:
    return kl_diag_gaussian(a.mean, a.std, b.mean, b.std) + kl_diag_gaussian(b.mean, b.std, a.mean, a.std)


@dataclass
class SurrogateGrid:
    """Binned-reward Dirichlet per cell of a (total length, total bend) grid.

    A design is projected onto the sum of its lengths and the sum of its bends.
    Bends are binned over [-max_bend, 3 max_bend] so that straight tools share a
    cell centred on zero; projected values outside the grid fall in the edge cells.
    """

    edges: List[FloatArray]
    alpha: FloatArray
    prior_count: float = 1.0

    @classmethod
    def build(cls, limits: WorldLimits, bins: int = 6, reward_bins: int = 8,
              prior_count: float = 1.0) -> "SurrogateGrid":
        edges = [np.linspace(0.0, limits.length_budget, bins + 1),
                 np.linspace(-limits.max_bend, 3.0 * limits.max_bend, bins + 1)]
        return cls(edges, np.full((bins * bins, reward_bins), float(prior_count)), float(prior_count))

    @property
    def reward_bins(self) -> int:
        return int(self.alpha.shape[1])

    @property
    def bin_centers(self) -> FloatArray:
        return (np.arange(self.reward_bins) + 0.5) / self.reward_bins

    @staticmethod
    def features(theta: FloatArray) -> Tuple[float, float]:
        """(total length, total bend) of a (L_1..L_N, phi_1..phi_N) vector."""
        theta = np.asarray(theta, dtype=float)
        n = theta.size // 2
        return float(np.sum(theta[:n])), float(np.sum(theta[n:]))

    def cell_of(self, theta: FloatArray) -> int:
        idx = [int(np.clip(np.searchsorted(e, x, side="right") - 1, 0, len(e) - 2))
               for x, e in zip(self.features(theta), self.edges)]
        return int(np.ravel_multi_index(idx, [len(e) - 1 for e in self.edges]))

    def reward_bin(self, reward: float) -> int:
        return int(min(max(int(reward * self.reward_bins), 0), self.reward_bins - 1))

    def dirichlet(self, theta: FloatArray) -> DirichletParams:
        return DirichletParams(self.alpha[self.cell_of(theta)])

    def predicted_reward(self, theta: FloatArray) -> float:
        return float(self.dirichlet(theta).mean @ self.bin_centers)

    def uncertainty(self, theta: FloatArray) -> Tuple[float, float, float]:
        """(total, aleatoric, epistemic) entropy of the cell's reward posterior."""
        return epistemic_aleatoric_decompose(self.dirichlet(theta))

    def success_probability(self, theta: FloatArray, reward_floor: float) -> float:
        return float(self.dirichlet(theta).mean[self.reward_bin(reward_floor):].sum())

    def update(self, theta: FloatArray, reward: float, weight: float = 1.0) -> None:
        self.alpha[self.cell_of(theta), self.reward_bin(reward)] += weight

    def copy(self) -> "SurrogateGrid":
        return SurrogateGrid([e.copy() for e in self.edges], self.alpha.copy(), self.prior_count)

    def to_dict(self) -> Dict[str, Any]:
        return {"features": ["total_length", "total_bend"], "edges": [e.tolist() for e in self.edges],
                "alpha": self.alpha.tolist()}


@dataclass(frozen=True)
class DesignCandidate:
    """A sampled design with its predicted reward and success confidence."""

    tool: ToolSpec
    predicted: float
    confidence: float
    valid: bool = True
    violation: Optional[str] = None
    iteration: int = 0
    index: int = 0
    raw_confidence: Optional[float] = None
    epistemic: float = 0.0
    aleatoric: float = 0.0
    success_rate: Optional[float] = None
    reward: Optional[float] = None

    def __post_init__(self) -> None:
        require(self.valid or bool(self.violation), "invalid candidate needs a violation code")
        require(0.0 <= self.confidence <= 1.0, "candidate confidence outside [0,1]")
        if self.raw_confidence is None:
            object.__setattr__(self, "raw_confidence", self.confidence)

    @property
    def provenance(self) -> Tuple[int, int]:
        return self.iteration, self.index

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tool": self.tool.to_dict(),
            "predicted": self.predicted,
            "confidence": self.confidence,
            "raw_confidence": self.raw_confidence,
            "valid": self.valid,
            "violation": self.violation,
            "provenance": list(self.provenance),
            "epistemic": self.epistemic,
            "aleatoric": self.aleatoric,
            "success_rate": self.success_rate,
            "reward": self.reward,
        }


@dataclass
class DesignScore:
    objective: float
    reward: float
    success_rate: float
    control: ConfidenceScore


def score_design(tool: ToolSpec, task: TaskSpec, env: EnvSpec, ctrl: ControllerParams, beta: float,
                 limits: WorldLimits, scales: ChannelScales) -> DesignScore:
    """J = robust mean performance + beta * control confidence at the best nominal pose."""
    robust = evaluate_robust(tool, task, env, limits)
    hand = performance(tool, task, limits=limits).hand
    control = tool_control_confidence(tool, ctrl, scales.control_scale, scales.control_reference, hand)
    return DesignScore(robust.mean_reward + beta * control.value, robust.mean_reward, robust.success_rate, control)


@dataclass
class DesignResult:
    tool: ToolSpec
    score: DesignScore
    model: GenerativeDesignModel
    trace: List[Dict[str, Any]] = field(default_factory=list)


def cem_design(task: TaskSpec, env: EnvSpec, ctrl: ControllerParams, cfg: DesignConfig, seed: int,
               limits: WorldLimits = WorldLimits(), scales: ChannelScales = ChannelScales()) -> DesignResult:
    """Cross-entropy search of the parameter box; returns the best design ever scored."""
    cfg.validate()
    lo, hi = limits.parameter_box()
    model = GenerativeDesignModel.broad(limits)
    rng = np.random.default_rng(seed)
    best: Optional[Tuple[ToolSpec, DesignScore]] = None
    trace: List[Dict[str, Any]] = []

    for it in range(cfg.iterations):
        tools = model.sample(rng, cfg.population, limits)
        scores = [score_design(t, task, env, ctrl, cfg.beta, limits, scales) for t in tools]
        objective = np.array([s.objective for s in scores])
        order = np.argsort(-objective, kind="stable")
        if best is None or objective[order[0]] > best[1].objective:
            best = (tools[order[0]], scores[order[0]])

        elites = np.array([tools[i].to_params(limits.max_segments) for i in order[:cfg.elite_count]])
        previous = model
        model = GenerativeDesignModel(
            np.clip(elites.mean(axis=0), lo, hi),
            np.maximum(elites.std(axis=0), max(cfg.noise_floor, 1e-9)),
        )
        trace.append({
            "iteration": it,
            "best_j": best[1].objective,
            "mean_j": float(objective.mean()),
            "kl_step": symmetric_kl(previous, model),
            "c_eval": None,
            "evaluations": (it + 1) * cfg.population,
        })
        logger.debug("cem iteration %d: best J %.4f mean J %.4f", it, best[1].objective, objective.mean())

    assert best is not None
    return DesignResult(best[0], best[1], model, trace)


@dataclass(frozen=True)
class PruneDecision:
    feature: str
    keep: bool
    delta: float
    split_evidence: float
    pooled_evidence: float


def _log_evidence(counts: FloatArray, prior: FloatArray) -> float:
    """Dirichlet-categorical log marginal likelihood ln B(prior + n) - ln B(prior)."""
    post = prior + counts
    return float(np.sum(special.gammaln(post)) - special.gammaln(post.sum())
                 - np.sum(special.gammaln(prior)) + special.gammaln(prior.sum()))


def prune_affordance_feature(model: WorldModel, feature: str, threshold: float = 3.0) -> PruneDecision:
    """Compare evidence for cells split by ``feature`` against cells pooled over it."""
    require(feature in AFFORDANCES, f"unknown affordance feature {feature!r}")
    require(any(feature in c for c in model.combos), f"feature {feature!r} occurs in no combination")
    observed = model.observations()
    prior = np.full(len(model.outcomes), model.prior_count)

    groups: Dict[Combo, List[int]] = {}
    for i, combo in enumerate(model.combos):
        base = tuple(a for a in combo if a != feature)
        groups.setdefault(base, []).append(i)

    split = pooled = 0.0
    for members in groups.values():
        for s in range(len(model.states)):
            cells = observed[members, s]
            split += sum(_log_evidence(c, prior) for c in cells)
            pooled += _log_evidence(cells.sum(axis=0), prior)
    delta = split - pooled
    decision = PruneDecision(feature, bool(delta >= threshold), delta, split, pooled)
    logger.debug("structure learning: %s delta=%.3f keep=%s", feature, delta, decision.keep)
    return decision


@dataclass(frozen=True)
class Discovery:
    combo: Combo
    tool: ToolSpec
    confidence: ConfidenceScore
    posterior: PolicyPosterior


def discover_tool(library: Iterable[str], belief: Any, model: WorldModel, cfg: PolicyConfig,
                  max_size: int, limits: WorldLimits = WorldLimits()) -> Discovery:
    """Pick the affordance subset with the highest expected reward and build its template tool."""
    library = canonical_combo(library)
    require(len(library) >= 1, "affordance library is empty")
    require(max_size >= 1, "combination size limit must be >= 1")
    posterior = policy_posterior(belief, enumerate_combos(library, max_size), model, cfg)
    best = posterior.best
    return Discovery(best, template_tool(best, limits), posterior.confidence, posterior)


def geometric_confidence(tool: ToolSpec, task: TaskSpec, limits: WorldLimits = WorldLimits(),
                         sharpness: float = 0.05, bend_sharpness: float = 0.1) -> float:
    """Cheap success estimate from reach geometry (and the hook rule for pulls), before any trial."""
    margin = task.reach_radius - abs(float(np.hypot(*task.target)) - tool_reach(tool))
    p = float(special.expit(margin / sharpness))
    if task.kind == "pull":
        p *= float(special.expit((tool.total_bend - float(task.hook_threshold)) / bend_sharpness))
    return p


@dataclass(frozen=True)
class DiscardDecision:
    proceed: bool
    reason: str = "ok"
    checkpoint: int = 0
    bound: float = 1.0


def early_discard(prefix: ToolSpec, task: TaskSpec, floors: Sequence[float],
                  limits: WorldLimits = WorldLimits()) -> DiscardDecision:
    """Walk the prefix segment by segment; abort once the optimistic success bound drops below the floor."""
    require(len(floors) >= 1, "early discard needs at least one checkpoint floor")
    target = float(np.hypot(*task.target))
    bound = 1.0
    for i in range(1, len(prefix.lengths) + 1):
        lengths = np.asarray(prefix.lengths[:i])
        bends = np.asarray(prefix.bends[:i])
        if i > limits.max_segments:
            return DiscardDecision(False, "segments", i, 0.0)
        if lengths[-1] < 0 or lengths[-1] > limits.max_length + 1e-12:
            return DiscardDecision(False, "length", i, 0.0)
        if abs(bends[-1]) > limits.max_bend + 1e-12:
            return DiscardDecision(False, "bend", i, 0.0)
        used = float(lengths.sum())
        if used > limits.length_budget + 1e-9:
            return DiscardDecision(False, "budget", i, 0.0)

        reach = float(np.hypot(*_tip_vectors(lengths, bends)))
        best_reach = reach + (limits.length_budget - used)
        gap = max(0.0, target - (task.reach_radius + best_reach))
        bound = math.exp(-gap ** 2 / (2.0 * task.score_width ** 2))
        floor = floors[min(i - 1, len(floors) - 1)]
        if bound < floor:
            return DiscardDecision(False, "reach", i, bound)
        if task.kind == "pull":
            spare_bend = (limits.max_segments - i) * limits.max_bend
            if float(bends.sum()) + spare_bend < float(task.hook_threshold):
                return DiscardDecision(False, "hook", i, 0.0)
    return DiscardDecision(True, "ok", len(prefix.lengths), bound)


@dataclass
class FinetuneResult:
    model: GenerativeDesignModel
    best: Optional[DesignCandidate]
    trace: List[Dict[str, Any]] = field(default_factory=list)
    evaluations: int = 0
    first_target_evaluation: Optional[int] = None


def _trust_region_step(model: GenerativeDesignModel, target: GenerativeDesignModel, eta: float,
                       kl_cap: float) -> Tuple[GenerativeDesignModel, float, float]:
    """Blend toward ``target`` by ``eta``, shrinking the step until the symmetric KL is within the cap."""

    def blend(w: float) -> GenerativeDesignModel:
        return GenerativeDesignModel((1 - w) * model.mean + w * target.mean, (1 - w) * model.std + w * target.std)

    if kl_cap <= 0.0 or eta <= 0.0:
        return model.copy(), 0.0, 0.0
    proposal = blend(eta)
    kl = symmetric_kl(model, proposal)
    if kl <= kl_cap:
        return proposal, eta, kl
    lo, hi = 0.0, eta
    for _ in range(KL_REFINEMENTS):
        mid = 0.5 * (lo + hi)
        if symmetric_kl(model, blend(mid)) <= kl_cap:
            lo = mid
        else:
            hi = mid
    step = blend(lo)
    return step, lo, symmetric_kl(model, step)


def finetune_generative(model: GenerativeDesignModel, surrogate: SurrogateGrid, task: TaskSpec, env: EnvSpec,
                        ctrl: ControllerParams, budget: int, cfg: FinetuneConfig, seed: int,
                        limits: WorldLimits = WorldLimits(),
                        calibration: CalibrationModel = CalibrationModel(),
                        scales: ChannelScales = ChannelScales()) -> FinetuneResult:
    """Sample, pick by surrogate acquisition, evaluate, and move the model inside a confidence-sized trust region.

    The reward is robust task performance. ``ctrl`` scores the control confidence of
    the current best design, traced as ``best_control``.
    """
    cfg.validate()
    require(budget >= cfg.population, f"budget {budget} is below the population {cfg.population}",
            error=ConfigError)
    rng = np.random.default_rng(seed)
    lo, hi = limits.parameter_box()
    per_iter = int(math.ceil(cfg.eval_fraction * cfg.population))
    model = model.copy()
    best: Optional[DesignCandidate] = None
    best_success = 0.0
    best_control = 0.0
    first_target: Optional[int] = None
    evaluations = 0
    trace: List[Dict[str, Any]] = []
    it = 0

    while evaluations < budget:
        tools = model.sample(rng, cfg.population, limits)
        thetas = np.array([t.to_params(limits.max_segments) for t in tools])
        uncertainty = [surrogate.uncertainty(th) for th in thetas]
        predicted = np.array([surrogate.predicted_reward(th) for th in thetas])
        acquisition = predicted + cfg.exploration * np.array([u[2] for u in uncertainty])
        chosen = np.argsort(-acquisition, kind="stable")[: min(per_iter, budget - evaluations)]

        rewards = []
        for i in chosen:
            robust = evaluate_robust(tools[i], task, env, limits)
            evaluations += 1
            surrogate.update(thetas[i], robust.mean_reward)
            raw = (robust.successes + 1.0) / (len(robust.outcomes) + 2.0)
            cand = DesignCandidate(
                tools[i], float(predicted[i]), calibration.apply(raw), iteration=it, index=int(i),
                raw_confidence=raw, aleatoric=uncertainty[i][1], epistemic=uncertainty[i][2],
                success_rate=robust.success_rate, reward=robust.mean_reward,
            )
            rewards.append(robust.mean_reward)
            if best is None or robust.mean_reward > best.reward:
                best = cand
                best_control = tool_control_confidence(cand.tool, ctrl, scales.control_scale,
                                                       scales.control_reference).value
            if robust.success_rate > best_success:
                best_success = robust.success_rate
            if first_target is None and robust.success_rate >= cfg.success_target:
                first_target = evaluations

        rewards_arr = np.array(rewards)
        weights = special.softmax(rewards_arr / cfg.weight_temperature)
        evaluated = thetas[chosen]
        mu_hat = np.clip(weights @ evaluated, lo, hi)
        sd_hat = np.maximum(np.sqrt(weights @ (evaluated - mu_hat) ** 2), cfg.noise_floor)

        c_eval = best.confidence if best is not None else 0.0
        eta = cfg.eta_min + (cfg.eta_max - cfg.eta_min) * c_eval
        model, eta_used, kl = _trust_region_step(model, GenerativeDesignModel(mu_hat, sd_hat), eta, cfg.kl_cap)
        trace.append({
            "iteration": it,
            "best_j": best.reward if best is not None else 0.0,
            "best_success": best_success,
            "best_control": best_control,
            "mean_j": float(rewards_arr.mean()),
            "kl_step": kl,
            "eta": eta_used,
            "c_eval": c_eval,
            "evaluations": evaluations,
        })
        logger.debug("finetune iteration %d: best %.3f c_eval %.3f eta %.3f kl %.4f",
                     it, trace[-1]["best_j"], c_eval, eta_used, kl)
        it += 1
        if c_eval >= cfg.halt_confidence:
            logger.info("finetune halted at iteration %d: confidence %.3f", it, c_eval)
            break

    return FinetuneResult(model, best, trace, evaluations, first_target)
