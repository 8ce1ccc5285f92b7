#!/usr/bin/env python3
"""Tests for the designer block: CEM search, structure learning, discovery and fine-tuning."""

import itertools
import math
import sys

import numpy as np
import pytest

from metatool.core.errors import ConfigError, ValidationError
from metatool.services.confidence import CalibrationModel, ChannelScales
from metatool.services.controller import ControllerParams, tool_control_confidence
from metatool.services.designer import (
    DesignCandidate,
    DesignConfig,
    FinetuneConfig,
    GenerativeDesignModel,
    SurrogateGrid,
    _trust_region_step,
    cem_design,
    discover_tool,
    early_discard,
    finetune_generative,
    geometric_confidence,
    kl_diag_gaussian,
    prune_affordance_feature,
    score_design,
    symmetric_kl,
)
from metatool.services.discovery import PolicyConfig, WorldModel, enumerate_combos, expected_rewards
from metatool.services.toyworld import (
    AFFORDANCES,
    EnvSpec,
    TaskSpec,
    ToolSpec,
    WorldLimits,
    combo_order,
    template_tool,
)

LIMITS = WorldLimits()
REACH = TaskSpec("reach", (1.4, 0.0))
PULL = TaskSpec("pull", (1.7, 0.0), hook_threshold=math.pi / 4)
ENV = EnvSpec(object_noise=0.02, bend_noise=0.02, trials=5, seed=0)
CTRL = ControllerParams()
STATES = ("reach", "pull")
OUTCOMES = ("success", "failure")


def test_gaussian_divergences():
    zero, one = np.zeros(1), np.ones(1)
    assert kl_diag_gaussian(zero, one, one, one) == pytest.approx(0.5)
    a = GenerativeDesignModel([0.0, 1.0], [1.0, 0.5])
    b = GenerativeDesignModel([0.5, 1.0], [2.0, 0.5])
    assert symmetric_kl(a, a) == pytest.approx(0.0)
    assert symmetric_kl(a, b) == pytest.approx(symmetric_kl(b, a))
    with pytest.raises(ValidationError):
        GenerativeDesignModel([0.0], [0.0])


def test_broad_model_samples_valid_tools():
    model = GenerativeDesignModel.broad(LIMITS)
    assert model.mean.shape == (LIMITS.dimension,)
    tools = model.sample(np.random.default_rng(1), 50, LIMITS)
    assert len(tools) == 50
    assert all(t.violation(LIMITS) is None for t in tools)


def test_untrained_surrogate_is_uninformative():
    grid = SurrogateGrid.build(LIMITS, bins=6, reward_bins=8)
    theta = template_tool(("extend",)).to_params(LIMITS.max_segments)
    assert grid.features(theta) == pytest.approx((0.8, 0.0))
    assert grid.alpha.shape == (6 * 6, 8)
    assert grid.predicted_reward(theta) == pytest.approx(0.5)
    floor = math.exp(-0.05 ** 2 / (2 * 0.1 ** 2))
    assert grid.success_probability(theta, floor) == pytest.approx(1.0 / 8.0)


def test_surrogate_cells_follow_total_length_and_bend():
    grid = SurrogateGrid.build(LIMITS)
    n = LIMITS.max_segments
    split = ToolSpec((0.5, 0.5), (0.2, -0.2)).to_params(n)
    joined = ToolSpec((0.25, 0.25, 0.25, 0.25), (0.0,) * 4).to_params(n)
    hooked = template_tool(("extend", "hook")).to_params(n)
    wedged = template_tool(("extend", "wedge")).to_params(n)
    assert grid.cell_of(split) == grid.cell_of(joined)
    assert len({grid.cell_of(joined), grid.cell_of(hooked), grid.cell_of(wedged)}) == 3
    grid.update(split, 0.99)
    assert grid.predicted_reward(joined) > 0.5
    assert grid.predicted_reward(hooked) == pytest.approx(0.5)
    curled = ToolSpec((0.1,) * 4, (math.pi / 2,) * 4).to_params(n)
    assert 0 <= grid.cell_of(curled) < grid.alpha.shape[0]
    copied = grid.copy()
    copied.update(hooked, 0.0)
    assert grid.predicted_reward(hooked) == pytest.approx(0.5)


def test_surrogate_learns_a_cell():
    grid = SurrogateGrid.build(LIMITS)
    theta = template_tool(("extend",)).to_params(LIMITS.max_segments)
    _, _, epistemic_before = grid.uncertainty(theta)
    for _ in range(60):
        grid.update(theta, 0.99)
    total, aleatoric, epistemic = grid.uncertainty(theta)
    assert grid.predicted_reward(theta) > 0.85
    assert total == pytest.approx(aleatoric + epistemic)
    assert epistemic < epistemic_before
    far = ToolSpec((0.1,), (-1.5,)).to_params(LIMITS.max_segments)
    assert grid.predicted_reward(far) == pytest.approx(0.5)
    assert grid.reward_bin(1.0) == 7 and grid.reward_bin(-0.1) == 0


def test_candidate_invariants():
    tool = template_tool(("hook",))
    cand = DesignCandidate(tool, 0.4, 0.7, iteration=2, index=5)
    assert cand.raw_confidence == 0.7
    assert cand.provenance == (2, 5)
    assert cand.to_dict()["tool"]["id"] == tool.id
    with pytest.raises(ValidationError):
        DesignCandidate(tool, 0.4, 0.7, valid=False)
    with pytest.raises(ValidationError):
        DesignCandidate(tool, 0.4, 1.2)


def test_design_objective_adds_weighted_control():
    scales = ChannelScales()
    score = score_design(template_tool(("extend",)), REACH, ENV, CTRL, 0.5, LIMITS, scales)
    assert score.objective == pytest.approx(score.reward + 0.5 * score.control.value)
    assert 0.0 <= score.success_rate <= 1.0


def test_design_config_validation():
    assert DesignConfig(population=10, elite_frac=0.125).elite_count == 2
    with pytest.raises(ConfigError):
        DesignConfig(population=1).validate()
    with pytest.raises(ConfigError):
        DesignConfig(elite_frac=0.0).validate()
    with pytest.raises(ConfigError):
        FinetuneConfig(eta_min=0.5, eta_max=0.2).validate()


def test_cem_finds_a_reaching_tool():
    cfg = DesignConfig(beta=0.5, population=16, elite_frac=0.25, iterations=6)
    result = cem_design(REACH, ENV, CTRL, cfg, seed=3, limits=LIMITS)
    assert result.tool.violation(LIMITS) is None
    assert result.score.reward > 0.6
    assert len(result.trace) == 6
    best = [row["best_j"] for row in result.trace]
    assert best == sorted(best)
    assert result.trace[-1]["evaluations"] == 96

    again = cem_design(REACH, ENV, CTRL, cfg, seed=3, limits=LIMITS)
    assert again.tool.id == result.tool.id


def test_performance_only_search_lands_on_the_object():
    cfg = DesignConfig(beta=0.0, population=64, elite_frac=0.125, iterations=30)
    result = cem_design(REACH, EnvSpec(trials=1), CTRL, cfg, seed=1, limits=LIMITS)
    assert result.score.objective == pytest.approx(result.score.reward)
    assert result.score.objective >= 0.95


def test_control_weighted_search_matches_the_grid_maximum():
    lengths = np.linspace(0.0, 0.8, 10)
    bends = np.linspace(-math.pi / 2, math.pi / 2, 11)
    grid_best = max(tool_control_confidence(ToolSpec((a, b), (p, q)), CTRL, 1.0).value
                 for a, b in itertools.product(lengths, lengths) for p, q in itertools.product(bends, bends))
    result = cem_design(REACH, ENV, CTRL, DesignConfig(beta=100.0), seed=2, limits=LIMITS)
    assert result.score.control.value >= grid_best - 0.02


def test_pruning_keeps_a_feature_that_matters():
    model = WorldModel(STATES, OUTCOMES, [("extend",), ("extend", "hook")])
    model.add_counts(("extend",), "pull", [0.0, 20.0])
    model.add_counts(("extend", "hook"), "pull", [20.0, 0.0])
    decision = prune_affordance_feature(model, "hook")
    assert decision.keep
    assert decision.delta == pytest.approx(decision.split_evidence - decision.pooled_evidence)
    assert decision.delta > 20.0


def test_pruning_drops_an_irrelevant_feature():
    model = WorldModel(STATES, OUTCOMES, [("extend",), ("extend", "hook")])
    model.add_counts(("extend",), "pull", [10.0, 10.0])
    model.add_counts(("extend", "hook"), "pull", [10.0, 10.0])
    decision = prune_affordance_feature(model, "hook")
    assert not decision.keep
    assert decision.delta < 0.0


def draw_outcomes(model, rng, rates, draws=2000):
    for combo, by_state in zip(model.combos, rates):
        for state, p in zip(STATES, by_state):
            wins = int(rng.binomial(draws, p))
            model.add_counts(combo, state, [wins, draws - wins])


def test_structure_learning_separates_noise_from_signal():
    pruned = kept = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        noise = WorldModel(STATES, OUTCOMES, [("extend",), ("extend", "push")])
        draw_outcomes(noise, rng, [(0.5, 0.3), (0.5, 0.3)])
        signal = WorldModel(STATES, OUTCOMES, [("extend",), ("extend", "push")])
        draw_outcomes(signal, rng, [(0.1, 0.1), (0.9, 0.9)])
        pruned += not prune_affordance_feature(noise, "push").keep
        kept += prune_affordance_feature(signal, "push").keep
    assert pruned >= 95
    assert kept >= 95


def test_pruning_rejects_unknown_features():
    model = WorldModel(STATES, OUTCOMES, [("extend",), ("extend", "hook")])
    with pytest.raises(ValidationError):
        prune_affordance_feature(model, "lever")
    with pytest.raises(ValidationError):
        prune_affordance_feature(model, "wedge")


def test_discovery_matches_brute_force():
    model = WorldModel.over_affordances(STATES, OUTCOMES, max_size=2)
    model.add_counts(("extend", "hook"), "pull", [10.0, 0.0])
    model.add_counts(("push",), "reach", [6.0, 0.0])
    cfg = PolicyConfig()
    for belief in ([0.0, 1.0], [1.0, 0.0], [0.5, 0.5]):
        found = discover_tool(("extend", "hook", "push", "wedge"), belief, model, cfg, max_size=2)
        combos = enumerate_combos(("extend", "hook", "push", "wedge"), 2)
        values = expected_rewards(belief, combos, model, cfg)
        top = max(values)
        oracle = min((c for c, v in zip(combos, values) if v == top), key=combo_order)
        assert found.combo == oracle
        assert found.tool == template_tool(oracle)
    assert discover_tool(("extend", "hook"), [0.0, 1.0], model, cfg, 2).combo == ("extend", "hook")


def hand_scored_best(library, belief, model, max_size):
    counts = model.counts
    best, top = None, -1.0
    for k in range(1, max_size + 1):
        for combo in itertools.combinations(sorted(library, key=AFFORDANCES.index), k):
            i = model.combos.index(combo)
            value = sum(b * counts[i, s, 0] / counts[i, s].sum() for s, b in enumerate(belief))
            if value > top:
                best, top = combo, value
    return best


def test_discovery_matches_exhaustive_scoring_on_random_models():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        model = WorldModel.over_affordances(STATES, OUTCOMES, max_size=3)
        for combo in model.combos:
            for state in STATES:
                model.add_counts(combo, state, rng.uniform(0.0, 20.0, size=2))
        belief = rng.dirichlet([1.0, 1.0])
        size = int(rng.integers(1, len(AFFORDANCES) + 1))
        library = tuple(str(a) for a in rng.choice(AFFORDANCES, size=size, replace=False))
        for max_size in (1, 2, 3):
            found = discover_tool(library, belief, model, PolicyConfig(), max_size)
            assert found.combo == hand_scored_best(library, belief, model, max_size)
            assert found.tool == template_tool(found.combo)


def test_discovery_over_an_uninformed_library_picks_the_canonical_first():
    model = WorldModel.over_affordances(STATES, OUTCOMES, max_size=2)
    found = discover_tool(("push", "extend"), [0.5, 0.5], model, PolicyConfig(), max_size=2)
    assert found.combo == ("extend",)
    with pytest.raises(ValidationError):
        discover_tool((), [0.5, 0.5], model, PolicyConfig(), max_size=2)


def test_geometric_confidence():
    assert geometric_confidence(ToolSpec((0.8,), (0.0,)), REACH) > 0.99
    assert geometric_confidence(ToolSpec((0.2,), (0.0,)), REACH) < 0.05
    straight = geometric_confidence(ToolSpec((0.8,), (0.0,)), PULL)
    hooked = geometric_confidence(template_tool(("extend", "hook")), PULL)
    assert straight < 0.01 < hooked


def test_early_discard_checkpoints():
    assert early_discard(ToolSpec((0.05,), (0.0,)), REACH, [0.5]).proceed

    far = TaskSpec("reach", (3.0, 0.0))
    decision = early_discard(ToolSpec((0.8, 0.8), (0.0, 0.0)), far, [0.5])
    assert not decision.proceed
    assert (decision.reason, decision.checkpoint) == ("reach", 1)
    assert decision.bound == pytest.approx(math.exp(-8.0))

    assert early_discard(ToolSpec((0.8, 0.8, 0.1), (0.0,) * 3), REACH, [0.0]).reason == "budget"
    assert early_discard(ToolSpec((0.5, 0.5), (0.0, 2.0)), REACH, [0.0]).reason == "bend"
    curled = early_discard(ToolSpec((0.1,) * 4, (-math.pi / 2, -math.pi / 2, 0.0, 0.0)), PULL, [0.0])
    assert (curled.reason, curled.checkpoint) == ("hook", 2)
    with pytest.raises(ValidationError):
        early_discard(ToolSpec((0.1,), (0.0,)), REACH, [])


def test_trust_region_respects_the_cap():
    a = GenerativeDesignModel(np.zeros(3), np.ones(3))
    far = GenerativeDesignModel(np.full(3, 5.0), np.full(3, 0.2))
    step, eta, kl = _trust_region_step(a, far, 0.9, kl_cap=0.5)
    assert kl <= 0.5 + 1e-9
    assert kl == pytest.approx(0.5, rel=1e-3)
    assert 0.0 < eta < 0.9

    near = GenerativeDesignModel(np.full(3, 0.01), np.ones(3))
    step, eta, kl = _trust_region_step(a, near, 0.9, kl_cap=0.5)
    assert eta == 0.9
    np.testing.assert_allclose(step.mean, np.full(3, 0.009))

    frozen, eta, kl = _trust_region_step(a, far, 0.9, kl_cap=0.0)
    np.testing.assert_array_equal(frozen.mean, a.mean)
    assert eta == 0.0 and kl == 0.0


def test_finetune_spends_its_budget_within_the_trust_region():
    cfg = FinetuneConfig(population=8, eval_fraction=0.25, kl_cap=0.5)
    surrogate = SurrogateGrid.build(LIMITS)
    start = GenerativeDesignModel.broad(LIMITS)
    result = finetune_generative(start, surrogate, PULL, ENV, CTRL, 16, cfg, seed=0, limits=LIMITS)
    assert result.evaluations == 16
    assert len(result.trace) == 8
    assert all(row["kl_step"] <= cfg.kl_cap + 1e-9 for row in result.trace)
    assert all(row["eta"] <= cfg.eta_max for row in result.trace)
    assert [row["evaluations"] for row in result.trace] == list(range(2, 17, 2))
    assert surrogate.alpha.sum() == pytest.approx(SurrogateGrid.build(LIMITS).alpha.sum() + 16)
    assert result.best is not None and result.best.reward is not None
    np.testing.assert_array_equal(start.mean, GenerativeDesignModel.broad(LIMITS).mean)
    assert result.trace[-1]["best_control"] == pytest.approx(tool_control_confidence(result.best.tool, CTRL, 1.0).value)
    assert 0.0 < result.trace[-1]["best_control"] < 1.0


def test_finetune_without_evaluator_confidence_takes_the_smallest_step():
    unreachable = TaskSpec("reach", (3.5, 0.0))
    cfg = FinetuneConfig(population=8, eta_min=0.1, eta_max=0.9, kl_cap=1e6)
    result = finetune_generative(GenerativeDesignModel.broad(LIMITS), SurrogateGrid.build(LIMITS), unreachable,
                                 ENV, CTRL, 16, cfg, seed=0, limits=LIMITS,
                                 calibration=CalibrationModel(temperature=1e-3))
    assert all(row["c_eval"] == 0.0 for row in result.trace)
    assert all(row["eta"] == pytest.approx(cfg.eta_min) for row in result.trace)
    assert result.first_target_evaluation is None


def test_finetune_halts_when_confident_and_checks_budget():
    cfg = FinetuneConfig(population=8, halt_confidence=0.0)
    result = finetune_generative(GenerativeDesignModel.broad(LIMITS), SurrogateGrid.build(LIMITS),
                                 REACH, ENV, CTRL, 40, cfg, seed=0, limits=LIMITS)
    assert len(result.trace) == 1
    assert result.evaluations == 2
    with pytest.raises(ConfigError):
        finetune_generative(GenerativeDesignModel.broad(LIMITS), SurrogateGrid.build(LIMITS),
                            REACH, ENV, CTRL, 4, cfg, seed=0, limits=LIMITS)


def main() -> int:
    """Run this module's tests."""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())
