"""Select command - choose a tool from the configured toolbox."""

import argparse

from ..core.context import derive_seed, get_output_dir
from ..core.utils import write_json
from ..services.evaluator import bare_hand_modulator, select_tool, suggest_control_refinement
from ..services.reporting import prepare_output
from . import run_seed


def cmd_select(args: argparse.Namespace) -> int:
    """Execute the select command."""
    settings = args.settings
    seed = run_seed(args)
    task = settings.task(args.task)
    env = settings.with_seed_env(derive_seed(seed, "select"))
    selection = select_tool(list(settings.loop.toolbox), task, env, settings.controller, settings.evaluator,
                            limits=settings.world, scales=settings.confidence)
    bare, seek = bare_hand_modulator(settings.controller, settings.evaluator.modulator_threshold,
                                     settings.confidence)
    refinements = suggest_control_refinement(selection.choice, settings.controller,
                                             limits=settings.world, scales=settings.confidence)

    out_dir = prepare_output(get_output_dir() / "select")
    path = out_dir / "selection.json"
    write_json(path, {
        "seed": seed,
        "task": task.to_dict(),
        "choice": selection.choice.to_dict(),
        "trigger": selection.trigger,
        "bypassed": selection.bypassed,
        "tools": [a.to_dict() for a in selection.assessments],
        "report": selection.report.to_dict(),
        "bare_hand": {"control": bare.value, "seek_new_strategy": seek},
        "refinements": [{"affordance": a, "delta_control": d} for a, d in refinements],
    })

    print(f"Selected {selection.choice.id} for the {task.kind} task")
    for a in selection.assessments:
        print(f"  {a.tool.id}: J={a.objective:.3f} perf={a.predicted:.3f} control={a.control.value:.3f}")
    if selection.trigger:
        print("  confidence is low for every tool: designer should be invoked")
    print(str(path))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    """Register the select command."""
    parser = subparsers.add_parser("select", help="Select a tool from the configured toolbox")
    parser.add_argument("--task", default=None, help="Task context (default: loop.context)")
    parser.set_defaults(func=cmd_select)
