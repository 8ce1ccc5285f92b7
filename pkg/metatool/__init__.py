"""
metatool - metacognitive confidence engine for simulated tool use.

Confidence channels over a planar tool-use world, a designer that searches and
fine-tunes tool geometry, affordance discovery on a belief-state world model,
and an evaluator that closes the loop and runs the canned experiments.
"""

from .core.utils import get_version

__version__ = get_version()

from .cli import main  # noqa: E402

__all__ = ["main"]
