#!/usr/bin/env python3
"""Tests for confidence reports, tool selection and candidate filtering."""

import math
import sys

import numpy as np
import pytest
from scipy import special

from metatool.core.errors import ConfigError, ValidationError
from metatool.services.confidence import CalibrationModel, Channel, ConfidenceReport, ConfidenceScore, DirichletParams
from metatool.services.controller import ControllerParams, control_precision
from metatool.services.designer import DesignCandidate, SurrogateGrid
from metatool.services.discovery import WorldModel
from metatool.services.evaluator import (
    EvaluatorConfig,
    adapt_learning_weight,
    assemble_report,
    bare_hand_modulator,
    filter_rank,
    select_tool,
    selection_order,
    suggest_control_refinement,
)
from metatool.services.toyworld import EnvSpec, TaskSpec, ToolSpec, WorldLimits

LIMITS = WorldLimits()
CTRL = ControllerParams()
REACH = TaskSpec("reach", (1.4, 0.0))
PULL = TaskSpec("pull", (1.7, 0.0), hook_threshold=math.pi / 4)
ENV = EnvSpec(object_noise=0.02, bend_noise=0.02, trials=5, seed=1)
STICK = ToolSpec((0.8,), (0.0,), frozenset({"extend"}), "stick")
NUB = ToolSpec((0.2,), (0.0,), frozenset({"push"}), "nub")


def test_report_needs_an_input():
    with pytest.raises(ValidationError):
        assemble_report()


def test_report_fills_only_given_channels():
    report = assemble_report(perceptual=[1.0, 0.0], q=[0.5, 0.5])
    assert report.value(Channel.PERCEPTUAL) == 1.0
    assert report.value(Channel.DECISION) == pytest.approx(0.0, abs=1e-12)
    data = report.to_dict()
    assert data["channels"]["utility"] is None
    assert data["missing"] == {"utility": "not-provided", "model": "not-provided", "control": "not-provided"}


def test_untrained_inputs_sit_at_the_midpoint():
    model = WorldModel(("reach", "pull"), ("success", "failure"), [("extend",)])
    bare = control_precision(ToolSpec((0.0,), (0.0,)), CTRL)
    report = assemble_report(utility=DirichletParams.uniform(8), model=model, precision=bare, ctrl=CTRL)
    for channel in (Channel.UTILITY, Channel.MODEL, Channel.CONTROL):
        assert report.value(channel) == pytest.approx(0.5)


def test_selection_order_breaks_ties_by_id():
    assert selection_order([0.5, 0.5], [0.2, 0.2], ["b", "a"], 0.5) == [1, 0]
    assert selection_order([0.1, 0.9, 0.5], [1.0, 0.0, 0.0], ["a", "b", "c"], 0.5) == [1, 0, 2]
    assert selection_order([0.1, 0.9], [1.0, 0.0], ["a", "b"], 2.0) == [0, 1]
    with pytest.raises(ValidationError):
        selection_order([0.1], [0.1, 0.2], ["a"], 0.5)


def test_confident_control_bypasses_the_user_block():
    selection = select_tool([NUB, STICK], REACH, ENV, CTRL, EvaluatorConfig(), limits=LIMITS, timestamp=7)
    assert selection.bypassed
    assert selection.choice == STICK
    assert {a.source for a in selection.assessments} == {"nominal"}
    assert not selection.trigger
    assert selection.report.timestamp == 7
    assert selection.report.get(Channel.CONTROL) is not None
    assert selection.report.get(Channel.DECISION) is not None
    assert selection.report.to_dict()["missing"]["model"] == "not-evaluated"


def test_unsure_control_runs_the_trials():
    cfg = EvaluatorConfig(skip_threshold=0.9)
    selection = select_tool([NUB, STICK], REACH, ENV, CTRL, cfg, limits=LIMITS)
    assert not selection.bypassed
    assert selection.choice == STICK
    stick = next(a for a in selection.assessments if a.tool == STICK)
    assert stick.source == "user"
    assert stick.objective == pytest.approx(stick.predicted + cfg.beta_select * stick.control.value)


def test_surrogate_predictions_replace_the_pose_search():
    selection = select_tool([NUB, STICK], REACH, ENV, CTRL, EvaluatorConfig(), limits=LIMITS,
                            surrogate=SurrogateGrid.build(LIMITS))
    assert selection.bypassed
    assert all(a.source == "surrogate" and a.predicted == pytest.approx(0.5) for a in selection.assessments)
    assert selection.choice == STICK


def test_straight_tools_trigger_invention_on_a_pull():
    selection = select_tool([NUB, STICK], PULL, ENV, CTRL, EvaluatorConfig(), limits=LIMITS)
    assert selection.trigger
    assert all(a.predicted == 0.0 for a in selection.assessments)
    with pytest.raises(ValidationError):
        select_tool([], PULL, ENV, CTRL, EvaluatorConfig())


def test_filter_rank_recalibrates_and_orders():
    cal = CalibrationModel(temperature=2.0)
    long_tool = ToolSpec((0.8,), (0.0,), id="a-long")
    short_tool = ToolSpec((0.4,), (0.0,), id="b-short")
    mid_tool = ToolSpec((0.6,), (0.0,), id="c-mid")
    bad_tool = ToolSpec((0.9,), (0.0,), id="d-bad")
    candidates = [
        DesignCandidate(long_tool, 0.5, 0.9),
        DesignCandidate(short_tool, 0.5, 0.9),
        DesignCandidate(mid_tool, 0.5, 0.6),
        DesignCandidate(bad_tool, 0.9, 0.99, valid=False, violation="length"),
    ]
    ranked = filter_rank(candidates, cal, top_k=2)
    assert [c.tool.id for c in ranked] == ["b-short", "a-long"]
    assert ranked[0].confidence == pytest.approx(float(special.expit(special.logit(0.9) / 2.0)))
    assert ranked[0].raw_confidence == 0.9
    assert len(filter_rank(candidates, cal, top_k=10)) == 3
    with pytest.raises(ValidationError):
        filter_rank(candidates, cal, top_k=0)


def test_learning_weight_tracks_decision_confidence():
    cfg = EvaluatorConfig(lr_min=0.5, lr_max=2.0)
    sure = ConfidenceReport().add(ConfidenceScore(Channel.DECISION, 0.0, 1.0))
    unsure = ConfidenceReport().add(ConfidenceScore(Channel.DECISION, 0.0, 0.0))
    assert adapt_learning_weight(sure, cfg) == 0.5
    assert adapt_learning_weight(unsure, cfg) == 2.0
    halfway = ConfidenceReport().add(ConfidenceScore(Channel.DECISION, 0.0, 0.5))
    assert adapt_learning_weight(halfway, cfg) == pytest.approx(1.25)
    with pytest.raises(ValidationError):
        adapt_learning_weight(ConfidenceReport(), cfg)


def test_bare_hand_modulator():
    score, switch = bare_hand_modulator(CTRL, 0.5)
    assert score.value == pytest.approx(0.5)
    assert not switch
    _, switch = bare_hand_modulator(CTRL, 0.6)
    assert switch


def test_control_refinement_prefers_longer_levers():
    suggestions = suggest_control_refinement(STICK, CTRL, limits=LIMITS)
    assert [tag for tag, _ in suggestions] == ["extend", "push", "wedge", "hook"]
    assert all(delta > 0 for _, delta in suggestions)
    full = ToolSpec((0.8, 0.8), (0.0, 0.0))
    assert suggest_control_refinement(full, CTRL, limits=LIMITS) == []


def test_evaluator_config_validation():
    with pytest.raises(ConfigError):
        EvaluatorConfig(skip_threshold=1.0).validate()
    with pytest.raises(ConfigError):
        EvaluatorConfig(lr_min=3.0, lr_max=2.0).validate()
    assert EvaluatorConfig().validate().beta_select == 0.5


def main() -> int:
    """Run this module's tests."""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())
