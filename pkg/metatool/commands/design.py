"""Design command - optimize a tool for a task with CEM or confidence-modulated fine-tuning."""

import argparse
from dataclasses import replace

from ..core.context import derive_seed, get_output_dir
from ..core.utils import write_json
from ..services.designer import GenerativeDesignModel, SurrogateGrid, cem_design, finetune_generative
from ..services.reporting import ChartSpec, prepare_output, write_table
from ..services.toyworld import tool_reach
from . import run_seed

TRACE_COLUMNS = ("iteration", "best_j", "best_success", "mean_j", "kl_step", "eta", "c_eval", "evaluations")


def cmd_design(args: argparse.Namespace) -> int:
    """Execute the design command."""
    settings = args.settings
    seed = run_seed(args)
    task = settings.task(args.task)
    env = replace(settings.env, seed=derive_seed(seed, "design-env"))
    out_dir = prepare_output(get_output_dir() / "design")

    if args.method == "cem":
        cfg = settings.design if args.beta is None else replace(settings.design, beta=args.beta)
        result = cem_design(task, env, settings.controller, cfg, derive_seed(seed, "design"),
                            settings.world, settings.confidence)
        tool, model, trace = result.tool, result.model, result.trace
        summary = {"objective": result.score.objective, "reward": result.score.reward,
                   "success_rate": result.score.success_rate, "control": result.score.control.value}
    else:
        ft = settings.finetune
        surrogate = SurrogateGrid.build(settings.world, ft.surrogate_bins, settings.confidence.reward_bins)
        result = finetune_generative(GenerativeDesignModel.broad(settings.world), surrogate, task, env,
                                     settings.controller, ft.budget, ft, derive_seed(seed, "design"),
                                     settings.world, settings.evaluator.calibration, settings.confidence)
        if result.best is None:
            print("No candidate was evaluated")
            return 3
        tool, model, trace = result.best.tool, result.model, result.trace
        summary = {"reward": result.best.reward, "success_rate": result.best.success_rate,
                   "confidence": result.best.confidence, "evaluations": result.evaluations,
                   "control": result.trace[-1]["best_control"]}

    write_json(out_dir / "design.json", {
        "method": args.method,
        "seed": seed,
        "task": task.to_dict(),
        "tool": tool.to_dict(),
        "summary": summary,
        "model": model.to_dict(),
    })
    paths = write_table(out_dir, "trace", trace, TRACE_COLUMNS,
                        ChartSpec(f"{args.method} trace", "iteration", ("best_j", "mean_j")))

    print(f"Designed {tool.id} for the {task.kind} task (reach {tool_reach(tool):.3f} m)")
    for key, value in summary.items():
        print(f"  {key}: {value:.4g}")
    print(str(out_dir / "design.json"))
    for path in paths:
        print(str(path))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    """Register the design command."""
    parser = subparsers.add_parser("design", help="Optimize a tool design for a task")
    parser.add_argument("--task", default="reach", help="Task context to design for (default: reach)")
    parser.add_argument("--method", choices=("cem", "finetune"), default="cem",
                        help="CEM search or confidence-modulated fine-tuning")
    parser.add_argument("--beta", type=float, default=None, help="Override design.beta")
    parser.set_defaults(func=cmd_design)
