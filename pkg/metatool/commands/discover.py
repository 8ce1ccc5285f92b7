"""Discover command - compose an affordance combination for a believed context."""

import argparse

import numpy as np

from ..core.context import get_output_dir
from ..core.errors import ValidationError
from ..core.utils import write_json
from ..services.designer import discover_tool, prune_affordance_feature
from ..services.discovery import WorldModel
from ..services.loop import OUTCOMES, pretrain_world_model
from ..services.reporting import prepare_output
from ..services.toyworld import AFFORDANCES, combo_key
from . import run_seed


def _belief(states, context, explicit):
    if explicit:
        values = [float(x) for x in explicit.split(",")]
        if len(values) != len(states):
            raise ValidationError(f"--belief needs {len(states)} comma-separated values")
        return np.asarray(values) / sum(values)
    belief = np.zeros(len(states))
    belief[list(states).index(context)] = 1.0
    return belief


def cmd_discover(args: argparse.Namespace) -> int:
    """Execute the discover command."""
    settings = args.settings
    seed = run_seed(args)
    states = tuple(settings.tasks)
    context = args.context or settings.loop.context
    if context not in states:
        raise ValidationError(f"unknown context {context!r}; choose from {', '.join(states)}")
    library = tuple(args.library.split(",")) if args.library else AFFORDANCES
    max_size = args.max_size or settings.loop.discovery_max_size

    model = WorldModel.over_affordances(states, OUTCOMES)
    pretrain_world_model(model, settings.tasks, settings.env, settings.loop.pretrain_trials, seed, settings.world)
    belief = _belief(states, context, args.belief)
    found = discover_tool(library, belief, model, settings.policy, max_size, settings.world)
    pruning = [prune_affordance_feature(model, f, settings.design.prune_threshold) for f in AFFORDANCES]

    out_dir = prepare_output(get_output_dir() / "discover")
    path = out_dir / "discovery.json"
    write_json(path, {
        "seed": seed,
        "belief": dict(zip(states, belief.tolist())),
        "combo": list(found.combo),
        "tool": found.tool.to_dict(),
        "confidence": found.confidence.to_dict(),
        "values": {combo_key(c): v for c, v in zip(found.posterior.combos, found.posterior.values.tolist())},
        "structure": [
            {"feature": d.feature, "keep": d.keep, "delta": d.delta} for d in pruning
        ],
    })

    print(f"Discovered {combo_key(found.combo)} (decision confidence {found.confidence.value:.3f})")
    for d in pruning:
        print(f"  {d.feature}: {'keep' if d.keep else 'prune'} (delta {d.delta:.2f} nats)")
    print(str(path))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    """Register the discover command."""
    parser = subparsers.add_parser("discover", help="Compose affordances into a new tool")
    parser.add_argument("--context", default=None, help="Believed task context (default: loop.context)")
    parser.add_argument("--belief", default=None, help="Explicit belief over contexts, e.g. 0.2,0.8")
    parser.add_argument("--library", default=None, help="Comma-separated affordance library")
    parser.add_argument("--max-size", type=int, default=None, help="Largest combination size")
    parser.set_defaults(func=cmd_discover)
