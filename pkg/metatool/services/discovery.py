"""Belief-state world model over hidden task contexts.

Tools are bundles of affordances. For every (affordance combination, context)
cell the model keeps Dirichlet counts over observation labels; one episode is
one tool application with one observed outcome.
"""

import enum
import logging
import threading
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from ..core.errors import ConfigError, ValidationError, require
from ..types import Combo, FloatArray
from .confidence import (
    PROB_FLOOR,
    Channel,
    ConfidenceReport,
    ConfidenceScore,
    DirichletParams,
    as_probvec,
    confidence_from_entropy,
    dirichlet_entropy,
    entropy_categorical,
    squash_to_confidence,
)
from .toyworld import AFFORDANCES, canonical_combo, combo_key, combo_order

logger = logging.getLogger(__name__)

SUCCESS = "success"
MAX_LEARNING_WEIGHT = 10.0


@dataclass(frozen=True)
class PolicyConfig:
    """Inverse temperature of the action posterior and utility of each outcome."""

    inverse_temperature: float = 10.0
    rewards: Mapping[str, float] = field(default_factory=lambda: {"success": 1.0, "failure": 0.0})

    def validate(self, outcomes: Sequence[str] = ()) -> "PolicyConfig":
        require(self.inverse_temperature >= 0, "policy.inverse_temperature must be >= 0", error=ConfigError)
        missing = [o for o in outcomes if o not in self.rewards]
        require(not missing, f"policy.rewards missing outcomes {missing}", error=ConfigError)
        return self


@dataclass(frozen=True)
class ImpasseConfig:
    decision_threshold: float = 0.3
    model_threshold: float = 0.7
    window: int = 5

    def validate(self) -> "ImpasseConfig":
        require(0 < self.decision_threshold < 1 and 0 < self.model_threshold < 1,
                "impasse thresholds must lie in (0,1)", error=ConfigError)
        require(self.window >= 1, "impasse.window must be >= 1", error=ConfigError)
        return self


class ImpasseReason(str, enum.Enum):
    IMPASSE = "impasse"
    EXPLORE_MORE = "explore-more"
    PROCEED = "proceed"


@dataclass(frozen=True)
class ImpasseResult:
    flag: bool
    reason: ImpasseReason


class WorldModel:
    """Dirichlet counts indexed by (combination, context, outcome)."""

    def __init__(self, states: Sequence[str], outcomes: Sequence[str], combos: Iterable[Iterable[str]],
                 prior_count: float = 1.0, counts: Optional[Any] = None):
        require(len(states) >= 2 and len(set(states)) == len(states), "world model needs >= 2 distinct states")
        require(len(outcomes) >= 2 and len(set(outcomes)) == len(outcomes),
                "world model needs >= 2 distinct outcomes")
        require(SUCCESS in outcomes, f"outcomes must include {SUCCESS!r}")
        require(prior_count > 0, "prior_count must be > 0")
        unique = {canonical_combo(c) for c in combos}
        require(all(unique), "empty affordance combination")
        self.states: Tuple[str, ...] = tuple(states)
        self.outcomes: Tuple[str, ...] = tuple(outcomes)
        self.combos: Tuple[Combo, ...] = tuple(sorted(unique, key=combo_order))
        self.prior_count = float(prior_count)
        shape = (len(self.combos), len(self.states), len(self.outcomes))
        if counts is None:
            self.counts = np.full(shape, self.prior_count)
        else:
            self.counts = np.array(counts, dtype=float)
            require(self.counts.shape == shape, f"counts must have shape {shape}")
            require(bool(np.all(self.counts >= self.prior_count - 1e-12)), "counts fall below the prior")
        self._index = {c: i for i, c in enumerate(self.combos)}
        self._lock = threading.Lock()

    @classmethod
    def over_affordances(cls, states: Sequence[str], outcomes: Sequence[str],
                         affordances: Sequence[str] = AFFORDANCES, max_size: Optional[int] = None,
                         prior_count: float = 1.0) -> "WorldModel":
        """Model with a cell for every non-empty affordance subset up to ``max_size``."""
        return cls(states, outcomes, enumerate_combos(affordances, max_size or len(affordances)), prior_count)

    def combo_index(self, combo: Iterable[str]) -> int:
        key = canonical_combo(combo)
        if key not in self._index:
            raise ValidationError(f"combination {combo_key(key) or '<empty>'} unknown to world model")
        return self._index[key]

    def state_index(self, state: str) -> int:
        if state not in self.states:
            raise ValidationError(f"unknown state {state!r}")
        return self.states.index(state)

    def outcome_index(self, outcome: str) -> int:
        if outcome not in self.outcomes:
            raise ValidationError(f"unknown outcome {outcome!r}")
        return self.outcomes.index(outcome)

    def cell(self, combo: Iterable[str], state: str) -> DirichletParams:
        return DirichletParams(self.counts[self.combo_index(combo), self.state_index(state)])

    def predictive(self, combo: Iterable[str]) -> FloatArray:
        """(states x outcomes) matrix of Dirichlet-mean outcome probabilities."""
        c = self.counts[self.combo_index(combo)]
        return c / c.sum(axis=1, keepdims=True)

    def success_probability(self, combo: Iterable[str], belief: Any) -> float:
        return float(as_probvec(belief) @ self.predictive(combo)[:, self.outcome_index(SUCCESS)])

    def observations(self) -> FloatArray:
        return self.counts - self.prior_count

    def add_counts(self, combo: Iterable[str], state: str, counts: Any) -> None:
        """Add non-negative (possibly fractional) counts to one cell."""
        inc = np.asarray(counts, dtype=float)
        require(inc.shape == (len(self.outcomes),) and bool(np.all(inc >= 0)), "counts must be non-negative")
        i, s = self.combo_index(combo), self.state_index(state)
        with self._lock:
            self.counts[i, s] += inc

    def copy(self) -> "WorldModel":
        return WorldModel(self.states, self.outcomes, self.combos, self.prior_count, self.counts.copy())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "states": list(self.states),
            "outcomes": list(self.outcomes),
            "prior_count": self.prior_count,
            "counts": {combo_key(c): self.counts[i].tolist() for i, c in enumerate(self.combos)},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WorldModel":
        keys = list(data["counts"])
        combos = [tuple(k.split("+")) for k in keys]
        model = cls(data["states"], data["outcomes"], combos, float(data.get("prior_count", 1.0)))
        for key, combo in zip(keys, combos):
            model.counts[model.combo_index(combo)] = np.asarray(data["counts"][key], dtype=float)
        return model


def enumerate_combos(library: Iterable[str], max_size: int) -> List[Combo]:
    """All non-empty subsets of ``library`` up to ``max_size``, in canonical order."""
    items = canonical_combo(library)
    out: List[Combo] = []
    for k in range(1, min(int(max_size), len(items)) + 1):
        out.extend(combinations(items, k))
    return sorted(out, key=combo_order)


def belief_update(belief: Any, combo: Iterable[str], outcome: str,
                  model: WorldModel) -> Tuple[FloatArray, bool]:
    """Bayes step on an observed outcome; returns (belief, updated)."""
    b = as_probvec(belief)
    require(b.size == len(model.states), "belief size does not match the model's states")
    likelihood = model.predictive(combo)[:, model.outcome_index(outcome)]
    weights = b * likelihood
    mass = float(weights.sum())
    if mass <= PROB_FLOOR:
        logger.debug("observation %s under %s carries no mass; belief kept", outcome, combo_key(combo))
        return b, False
    return weights / mass, True


@dataclass(frozen=True)
class PolicyPosterior:
    combos: Tuple[Combo, ...]
    values: FloatArray
    q: FloatArray
    confidence: ConfidenceScore

    @property
    def best(self) -> Combo:
        """Highest-value combination; equal values resolve to the canonically first."""
        top = float(self.values.max())
        tied = [c for c, v in zip(self.combos, self.values) if v == top]
        return min(tied, key=combo_order)

    def value_of(self, combo: Iterable[str]) -> float:
        return float(self.values[self.combos.index(canonical_combo(combo))])


def expected_rewards(belief: Any, combos: Sequence[Iterable[str]], model: WorldModel,
                     cfg: PolicyConfig) -> FloatArray:
    b = as_probvec(belief)
    rewards = np.array([cfg.rewards[o] for o in model.outcomes], dtype=float)
    return np.array([float(b @ (model.predictive(c) @ rewards)) for c in combos])


def policy_posterior(belief: Any, combos: Sequence[Iterable[str]], model: WorldModel,
                     cfg: PolicyConfig) -> PolicyPosterior:
    """Softmax action posterior over combinations and its decision confidence."""
    require(len(combos) >= 1, "policy posterior needs at least one combination")
    cfg.validate(model.outcomes)
    keys = tuple(canonical_combo(c) for c in combos)
    values = expected_rewards(belief, keys, model, cfg)
    q = special.softmax(cfg.inverse_temperature * values)
    h = entropy_categorical(q)
    score = ConfidenceScore(Channel.DECISION, h, confidence_from_entropy(min(h, np.log(len(q))), len(q)))
    return PolicyPosterior(keys, values, q, score)


def model_reference_entropy(model: WorldModel) -> float:
    """Entropy of an untrained cell; the model channel's squash midpoint."""
    return dirichlet_entropy(DirichletParams.uniform(len(model.outcomes), model.prior_count))


def model_confidence(model: WorldModel, combos: Sequence[Iterable[str]], scale: float = 1.0) -> ConfidenceScore:
    """Mean Dirichlet entropy over every (combination, state) cell in scope, squashed."""
    require(len(combos) >= 1, "model confidence needs a non-empty scope")
    idx = sorted({model.combo_index(c) for c in combos})
    entropies = [dirichlet_entropy(DirichletParams(model.counts[i, s]))
                 for i in idx for s in range(len(model.states))]
    h = float(np.mean(entropies))
    return ConfidenceScore(Channel.MODEL, h, squash_to_confidence(h, model_reference_entropy(model), scale))


def impasse_detect(history: Sequence[ConfidenceReport], cfg: ImpasseConfig) -> ImpasseResult:
    """Impasse iff the last W reports all show low decision and high model confidence."""
    require(len(history) >= cfg.window, f"impasse check needs {cfg.window} reports, got {len(history)}")
    window = list(history)[-cfg.window:]
    decision = [r.value(Channel.DECISION) for r in window]
    model = [r.value(Channel.MODEL) for r in window]
    low_decision = all(d < cfg.decision_threshold for d in decision)
    if low_decision and all(m > cfg.model_threshold for m in model):
        return ImpasseResult(True, ImpasseReason.IMPASSE)
    if low_decision:
        return ImpasseResult(False, ImpasseReason.EXPLORE_MORE)
    return ImpasseResult(False, ImpasseReason.PROCEED)


def record_outcome(model: WorldModel, combo: Iterable[str], state: Union[str, Any], outcome: str,
                   lr: float = 1.0) -> WorldModel:
    """Add ``lr`` soft counts for ``outcome``, spread over states by a label or a belief."""
    require(0.0 < lr <= MAX_LEARNING_WEIGHT, f"learning weight must be in (0, {MAX_LEARNING_WEIGHT}]")
    o = model.outcome_index(outcome)
    model.combo_index(combo)
    if isinstance(state, str):
        weights = np.zeros(len(model.states))
        weights[model.state_index(state)] = 1.0
    else:
        weights = as_probvec(state)
        require(weights.size == len(model.states), "belief size does not match the model's states")
    for s, w in enumerate(weights):
        if w > 0.0:
            inc = np.zeros(len(model.outcomes))
            inc[o] = lr * w
            model.add_counts(combo, model.states[s], inc)
    return model
