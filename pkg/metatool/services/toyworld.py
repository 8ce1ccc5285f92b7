"""Planar tool-use world: polyline tools, reach/pull tasks and perturbed trials."""

import functools
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ValidationError, require
from ..types import Combo, FloatArray, Point, Pose

logger = logging.getLogger(__name__)

AFFORDANCES: Tuple[str, ...] = ("extend", "hook", "push", "wedge")
TASK_KINDS = ("reach", "pull")

_SEED_MASK = (1 << 64) - 1
_TRIAL_CHUNK = 64


def canonical_combo(tags: Iterable[str]) -> Combo:
    """Sort affordance tags into canonical order; unknown tags are rejected."""
    tags = set(tags)
    unknown = tags.difference(AFFORDANCES)
    require(not unknown, f"unknown affordance tags: {sorted(unknown)}")
    return tuple(a for a in AFFORDANCES if a in tags)


def combo_key(combo: Iterable[str]) -> str:
    return "+".join(canonical_combo(combo))


def combo_order(combo: Combo) -> Tuple[int, Tuple[int, ...]]:
    """Sort key giving the canonical order of affordance combinations."""
    return len(combo), tuple(AFFORDANCES.index(a) for a in combo)


@dataclass(frozen=True)
class WorldLimits:
    """Tool bounds and the resolution of the user's hand-pose search."""

    max_segments: int = 4
    max_length: float = 0.8
    max_bend: float = math.pi / 2
    length_budget: float = 1.6
    reach_tolerance: float = 0.05
    grid_positions: int = 21
    grid_headings: int = 24

    def validate(self) -> "WorldLimits":
        require(self.max_segments >= 1, "world.max_segments must be >= 1")
        require(self.max_length > 0 and self.length_budget > 0, "world lengths must be > 0")
        require(0 < self.max_bend <= math.pi, "world.max_bend must be in (0, pi]")
        require(self.reach_tolerance > 0, "world.reach_tolerance must be > 0")
        require(self.grid_positions >= 2 and self.grid_headings >= 1, "world pose grid too small")
        return self

    @property
    def dimension(self) -> int:
        return 2 * self.max_segments

    def parameter_box(self) -> Tuple[FloatArray, FloatArray]:
        """Lower/upper bounds of the (L_1..L_N, phi_1..phi_N) parameter vector."""
        n = self.max_segments
        lo = np.concatenate([np.zeros(n), np.full(n, -self.max_bend)])
        hi = np.concatenate([np.full(n, self.max_length), np.full(n, self.max_bend)])
        return lo, hi


@dataclass(frozen=True)
class ToolSpec:
    """Polyline tool: segment lengths (m), relative bends (rad) and affordance tags."""

    lengths: Tuple[float, ...]
    bends: Tuple[float, ...]
    affordances: FrozenSet[str] = frozenset()
    id: str = ""

    def __post_init__(self) -> None:
        lengths = tuple(float(x) for x in self.lengths)
        bends = tuple(float(x) for x in self.bends)
        require(len(lengths) == len(bends), "tool needs one bend per segment")
        require(len(lengths) >= 1, "tool needs at least one segment")
        require(all(math.isfinite(x) for x in lengths + bends), "tool geometry must be finite")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "bends", bends)
        object.__setattr__(self, "affordances", frozenset(canonical_combo(self.affordances)))
        if not self.id:
            object.__setattr__(self, "id", geometry_id(lengths, bends))

    @property
    def segments(self) -> Tuple[Tuple[float, float], ...]:
        return tuple(zip(self.lengths, self.bends))

    @property
    def total_length(self) -> float:
        return float(sum(self.lengths))

    @property
    def total_bend(self) -> float:
        return float(sum(self.bends))

    @property
    def combo(self) -> Combo:
        return canonical_combo(self.affordances)

    def violation(self, limits: WorldLimits) -> Optional[str]:
        """Code of the first violated bound, or None for a valid tool."""
        if len(self.lengths) > limits.max_segments:
            return "segments"
        if any(x < 0 or x > limits.max_length + 1e-12 for x in self.lengths):
            return "length"
        if any(abs(x) > limits.max_bend + 1e-12 for x in self.bends):
            return "bend"
        if self.total_length > limits.length_budget + 1e-9:
            return "budget"
        return None

    def validate(self, limits: WorldLimits) -> "ToolSpec":
        code = self.violation(limits)
        if code is not None:
            raise ValidationError(f"tool {self.id} violates {code} bound")
        return self

    def to_params(self, n: int) -> FloatArray:
        """Pad to the fixed (L_1..L_n, phi_1..phi_n) layout with zero-length segments."""
        require(len(self.lengths) <= n, f"tool has more than {n} segments")
        lengths = np.zeros(n)
        bends = np.zeros(n)
        lengths[: len(self.lengths)] = self.lengths
        bends[: len(self.bends)] = self.bends
        return np.concatenate([lengths, bends])

    @classmethod
    def from_params(cls, theta: Sequence[float], limits: WorldLimits,
                    affordances: Iterable[str] = (), id: str = "") -> "ToolSpec":
        """Clamp a parameter vector into the box and the length budget."""
        theta = np.asarray(theta, dtype=float)
        n = limits.max_segments
        require(theta.shape == (2 * n,), f"parameter vector must have {2 * n} entries")
        lengths = np.clip(theta[:n], 0.0, limits.max_length)
        bends = np.clip(theta[n:], -limits.max_bend, limits.max_bend)
        total = float(lengths.sum())
        if total > limits.length_budget:
            lengths = lengths * (limits.length_budget / total)
        return cls(tuple(lengths), tuple(bends), frozenset(affordances), id)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "segments": [{"length": l, "bend": b} for l, b in self.segments],
            "affordances": list(self.combo),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ToolSpec":
        segments = data.get("segments") or []
        return cls(
            tuple(float(s["length"]) for s in segments),
            tuple(float(s["bend"]) for s in segments),
            frozenset(data.get("affordances") or ()),
            str(data.get("id") or ""),
        )


def geometry_id(lengths: Sequence[float], bends: Sequence[float]) -> str:
    """Stable identifier derived from rounded geometry."""
    text = ";".join(f"{l:.6f},{b:.6f}" for l, b in zip(lengths, bends))
    return "tool-" + hashlib.sha256(text.encode()).hexdigest()[:10]


@dataclass(frozen=True)
class TaskSpec:
    """Object to reach (or hook and pull) from a hand confined to a disk of radius R."""

    kind: str = "reach"
    target: Point = (1.4, 0.0)
    reach_radius: float = 1.0
    score_width: float = 0.1
    hook_threshold: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", (float(self.target[0]), float(self.target[1])))

    def validate(self, limits: WorldLimits) -> "TaskSpec":
        require(self.kind in TASK_KINDS, f"task kind must be one of {TASK_KINDS}")
        require(self.reach_radius > 0, "task.reach_radius must be > 0")
        require(self.score_width > 0, "task.score_width must be > 0")
        if self.kind == "pull":
            require(self.hook_threshold is not None
                    and 0 < self.hook_threshold <= limits.max_segments * limits.max_bend,
                    "pull task needs 0 < hook_threshold <= max_segments * max_bend")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TaskSpec":
        return cls(**data)


@dataclass(frozen=True)
class EnvSpec:
    """Perturbation magnitudes and the seeded trial schedule."""

    object_noise: float = 0.0
    bend_noise: float = 0.0
    trials: int = 20
    seed: int = 0

    def validate(self) -> "EnvSpec":
        require(self.object_noise >= 0 and self.bend_noise >= 0, "env noise must be >= 0")
        require(self.trials >= 1, "env.trials must be >= 1")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EnvSpec":
        return cls(**data)


@dataclass(frozen=True)
class PerformanceResult:
    score: float
    success: bool
    distance: float
    hand: Pose
    hooked: bool = True

    @property
    def reward(self) -> float:
        return self.score if self.hooked else 0.0


@dataclass(frozen=True)
class TrialOutcome:
    success: bool
    perf: float
    object_offset: Point
    bend_offsets: Tuple[float, ...]
    hooked: bool = True

    @property
    def reward(self) -> float:
        """Score that counts only when the task's hook rule holds."""
        return self.perf if self.hooked else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class RobustEvaluation:
    success_rate: float
    mean_perf: float
    outcomes: List[TrialOutcome] = field(default_factory=list)

    @property
    def successes(self) -> int:
        return sum(1 for o in self.outcomes if o.success)

    @property
    def mean_reward(self) -> float:
        if not self.outcomes:
            return 0.0
        return float(np.mean([o.reward for o in self.outcomes]))


@functools.lru_cache(maxsize=16)
def _pose_grid(radius: float, n_pos: int, n_head: int) -> Tuple[FloatArray, FloatArray]:
    axis = np.linspace(-radius, radius, n_pos)
    xs, ys = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    pts = pts[np.sum(pts ** 2, axis=1) <= radius ** 2 * (1.0 + 1e-9)]
    headings = 2.0 * math.pi * np.arange(n_head) / n_head
    pts.setflags(write=False)
    headings.setflags(write=False)
    return pts, headings


def _tip_vectors(lengths: FloatArray, bends: FloatArray) -> FloatArray:
    """Tip offsets in the hand frame; accepts (m,) or batched (k, m) inputs."""
    angles = np.cumsum(bends, axis=-1)
    return np.stack([np.sum(lengths * np.cos(angles), axis=-1),
                     np.sum(lengths * np.sin(angles), axis=-1)], axis=-1)


def tool_reach(tool: ToolSpec) -> float:
    """Distance from hand to tip."""
    return float(np.hypot(*_tip_vectors(np.asarray(tool.lengths), np.asarray(tool.bends))))


def forward_kinematics(tool: ToolSpec, hand: Pose = (0.0, 0.0, 0.0)) -> FloatArray:
    """Tip position of ``tool`` held at ``hand`` = (x, y, heading)."""
    x, y, psi = hand
    angles = psi + np.cumsum(tool.bends)
    lengths = np.asarray(tool.lengths)
    return np.array([x + float(np.sum(lengths * np.cos(angles))),
                     y + float(np.sum(lengths * np.sin(angles)))])


def _best_poses(tips: FloatArray, targets: FloatArray, task: TaskSpec,
                limits: WorldLimits) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """Minimum tip-target distance over the pose grid for each (tip, target) pair."""
    positions, headings = _pose_grid(task.reach_radius, limits.grid_positions, limits.grid_headings)
    cos_h, sin_h = np.cos(headings), np.sin(headings)
    rot = np.stack([tips[:, None, 0] * cos_h - tips[:, None, 1] * sin_h,
                    tips[:, None, 0] * sin_h + tips[:, None, 1] * cos_h], axis=-1)  # (k, H, 2)
    needed = targets[:, None, :] - rot  # hand position that would put the tip on target
    best_d = np.empty(len(tips))
    best_pos = np.empty(len(tips), dtype=int)
    best_head = np.empty(len(tips), dtype=int)
    for start in range(0, len(tips), _TRIAL_CHUNK):
        chunk = needed[start:start + _TRIAL_CHUNK]
        d2 = np.sum((chunk[:, :, None, :] - positions[None, None, :, :]) ** 2, axis=-1)  # (k, H, P)
        flat = d2.reshape(len(chunk), -1).argmin(axis=1)
        h_idx, p_idx = np.unravel_index(flat, d2.shape[1:])
        best_d[start:start + len(chunk)] = np.sqrt(d2[np.arange(len(chunk)), h_idx, p_idx])
        best_head[start:start + len(chunk)] = h_idx
        best_pos[start:start + len(chunk)] = p_idx
    poses = np.column_stack([positions[best_pos], headings[best_head]])
    return best_d, poses, rot[np.arange(len(tips)), best_head]


def _score(distance: Any, task: TaskSpec) -> Any:
    return np.exp(-np.square(distance) / (2.0 * task.score_width ** 2))


def performance(tool: ToolSpec, task: TaskSpec, target: Optional[Point] = None,
                limits: WorldLimits = WorldLimits()) -> PerformanceResult:
    """Best score over the hand-pose grid; success needs the tip within tolerance (and a hook for pulls)."""
    goal = np.asarray(task.target if target is None else target, dtype=float)
    tip = _tip_vectors(np.asarray(tool.lengths), np.asarray(tool.bends))
    dist, poses, _ = _best_poses(tip[None, :], goal[None, :], task, limits)
    d = float(dist[0])
    hooked = _has_hook(tool.total_bend, task)
    success = d <= limits.reach_tolerance and hooked
    return PerformanceResult(float(_score(d, task)), bool(success), d,
                             (float(poses[0, 0]), float(poses[0, 1]), float(poses[0, 2])), hooked)


def _has_hook(total_bend: float, task: TaskSpec) -> bool:
    if task.kind != "pull":
        return True
    return total_bend >= float(task.hook_threshold)


def trial_generator(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, trial index)."""
    key = np.array([int(seed) & _SEED_MASK, int(trial) & _SEED_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def evaluate_robust(tool: ToolSpec, task: TaskSpec, env: EnvSpec,
                    limits: WorldLimits = WorldLimits()) -> RobustEvaluation:
    """Run ``env.trials`` perturbed trials; outcomes depend only on (seed, trial index)."""
    m = len(tool.lengths)
    offsets = np.zeros((env.trials, 2))
    bend_noise = np.zeros((env.trials, m))
    for t in range(env.trials):
        rng = trial_generator(env.seed, t)
        offsets[t] = rng.normal(size=2) * env.object_noise
        bend_noise[t] = rng.normal(size=m) * env.bend_noise

    bends = np.asarray(tool.bends)[None, :] + bend_noise
    lengths = np.broadcast_to(np.asarray(tool.lengths), bends.shape)
    tips = _tip_vectors(lengths, bends)
    targets = np.asarray(task.target)[None, :] + offsets
    dist, _, _ = _best_poses(tips, targets, task, limits)
    perf = _score(dist, task)
    hooked = np.array([_has_hook(b, task) for b in bends.sum(axis=1)])
    success = (dist <= limits.reach_tolerance) & hooked

    outcomes = [
        TrialOutcome(bool(success[t]), float(perf[t]),
                     (float(offsets[t, 0]), float(offsets[t, 1])), tuple(float(x) for x in bend_noise[t]),
                     bool(hooked[t]))
        for t in range(env.trials)
    ]
    return RobustEvaluation(float(success.mean()), float(perf.mean()), outcomes)


# Segment templates (length as a fraction of max_length, bend) in canonical order.
AFFORDANCE_TEMPLATES: Dict[str, Tuple[float, float]] = {
    "extend": (1.0, 0.0),
    "hook": (0.25, math.pi / 3),
    "push": (0.5, 0.0),
    "wedge": (0.25, -math.pi / 4),
}


def template_tool(combo: Iterable[str], limits: WorldLimits = WorldLimits()) -> ToolSpec:
    """Concatenate the per-affordance template segments of ``combo`` in canonical order."""
    combo = canonical_combo(combo)
    require(len(combo) >= 1, "affordance combination is empty")
    lengths = tuple(AFFORDANCE_TEMPLATES[a][0] * limits.max_length for a in combo)
    bends = tuple(AFFORDANCE_TEMPLATES[a][1] for a in combo)
    return ToolSpec(lengths, bends, frozenset(combo), "template-" + combo_key(combo))


def infer_affordances(tool: ToolSpec, limits: WorldLimits = WorldLimits()) -> Combo:
    """Tag a free-form design with the affordances its geometry offers."""
    tags = set()
    for length, bend in tool.segments:
        if length >= 0.75 * limits.max_length:
            tags.add("extend")
        elif length >= 0.375 * limits.max_length and abs(bend) <= math.pi / 12:
            tags.add("push")
    if tool.total_bend >= math.pi / 4:
        tags.add("hook")
    if tool.total_bend <= -math.pi / 8:
        tags.add("wedge")
    return canonical_combo(tags or {"push"})
