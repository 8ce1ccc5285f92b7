"""Entropy-based confidence channels.

Every confidence signal in metatool is a normalized transform of the entropy of
a posterior: categorical posteriors (perceived state, action options) use
``1 - H / ln n``; differential entropies (Dirichlet parameters, Gaussian control
posteriors) are squashed through a logistic curve centred on a per-channel
reference entropy. All entropies are in nats.
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from ..core.errors import ValidationError, require
from ..types import FloatArray

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
NORM_TOL = 1e-9
MIN_CALIBRATION_SAMPLES = 10
TEMPERATURE_GRID = tuple(0.05 * 2.0 ** k for k in range(12))
TEMPERATURE_REFINEMENTS = 30
HELDOUT_STRIDE = 5


class Channel(str, enum.Enum):
    """The five loci at which the evaluator measures confidence."""

    PERCEPTUAL = "perceptual"
    UTILITY = "utility"
    MODEL = "model"
    CONTROL = "control"
    DECISION = "decision"


CHANNELS: Tuple[Channel, ...] = tuple(Channel)


def as_probvec(p: Any) -> FloatArray:
    """Validate and return a categorical distribution as a float array."""
    arr = np.asarray(p, dtype=float)
    require(arr.ndim == 1 and arr.size >= 1, "probability vector must be one-dimensional and non-empty")
    require(bool(np.all(np.isfinite(arr))), "probability vector has non-finite entries")
    require(bool(np.all(arr >= 0.0)), "probability vector has negative entries")
    require(abs(float(arr.sum()) - 1.0) <= NORM_TOL, f"probability vector sums to {arr.sum():.12g}, not 1")
    return arr


def normalize(weights: Any) -> FloatArray:
    """Scale non-negative weights to sum to one."""
    arr = np.asarray(weights, dtype=float)
    total = float(arr.sum())
    require(total > 0.0 and bool(np.all(arr >= 0.0)), "cannot normalize weights without positive mass")
    return arr / total


@dataclass(frozen=True, eq=False)
class DirichletParams:
    """Concentration vector of a Dirichlet posterior over categorical outcomes."""

    alpha: FloatArray

    def __post_init__(self) -> None:
        arr = np.array(self.alpha, dtype=float)
        require(arr.ndim == 1 and arr.size >= 2, "Dirichlet needs at least two categories")
        require(bool(np.all(np.isfinite(arr))) and bool(np.all(arr > 0.0)),
                "Dirichlet concentrations must be finite and > 0")
        arr.setflags(write=False)
        object.__setattr__(self, "alpha", arr)

    @classmethod
    def uniform(cls, k: int, count: float = 1.0) -> "DirichletParams":
        return cls(np.full(int(k), float(count)))

    @property
    def concentration(self) -> float:
        return float(self.alpha.sum())

    @property
    def mean(self) -> FloatArray:
        return self.alpha / self.alpha.sum()

    def __len__(self) -> int:
        return int(self.alpha.size)


@dataclass(frozen=True)
class ConfidenceScore:
    """One channel's confidence: the entropy it came from and its [0,1] value."""

    channel: Channel
    raw_entropy: float
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel", Channel(self.channel))
        require(0.0 <= self.value <= 1.0, f"{self.channel.value} confidence {self.value} outside [0,1]")

    def to_dict(self) -> Dict[str, Any]:
        return {"entropy": self.raw_entropy, "value": self.value}


@dataclass
class ConfidenceReport:
    """At most one score per channel, stamped with the episode index."""

    timestamp: int = 0
    scores: Dict[Channel, ConfidenceScore] = field(default_factory=dict)
    missing: Dict[Channel, str] = field(default_factory=dict)

    def add(self, score: ConfidenceScore) -> "ConfidenceReport":
        require(score.channel not in self.scores, f"duplicate {score.channel.value} score in report")
        self.scores[score.channel] = score
        self.missing.pop(score.channel, None)
        return self

    def mark_missing(self, channel: Channel, reason: str) -> None:
        if channel not in self.scores:
            self.missing[Channel(channel)] = reason

    def get(self, channel: Channel) -> Optional[ConfidenceScore]:
        return self.scores.get(Channel(channel))

    def value(self, channel: Channel) -> float:
        """Confidence value of ``channel``; raises ValidationError when absent."""
        score = self.get(channel)
        if score is None:
            raise ValidationError(f"report {self.timestamp} has no {Channel(channel).value} confidence")
        return score.value

    def to_dict(self) -> Dict[str, Any]:
        """Channel-keyed JSON form; absent channels are ``null`` with a reason code."""
        channels: Dict[str, Any] = {}
        reasons: Dict[str, str] = {}
        for channel in CHANNELS:
            score = self.scores.get(channel)
            if score is None:
                channels[channel.value] = None
                reasons[channel.value] = self.missing.get(channel, "not-provided")
            else:
                channels[channel.value] = score.to_dict()
        out: Dict[str, Any] = {"timestamp": self.timestamp, "channels": channels}
        if reasons:
            out["missing"] = reasons
        return out


@dataclass(frozen=True)
class ChannelScales:
    """Squash parameters of the continuous channels and the utility binning."""

    reward_bins: int = 8
    model_scale: float = 1.0
    utility_scale: float = 1.0
    control_scale: float = 1.0
    control_reference: Optional[float] = None

    def validate(self) -> "ChannelScales":
        require(self.reward_bins >= 2, "confidence.reward_bins must be >= 2")
        require(min(self.model_scale, self.utility_scale, self.control_scale) > 0,
                "confidence scales must be > 0")
        return self

    def utility_reference(self) -> float:
        """Entropy of the untrained reward-bin posterior Dir(1, ..., 1)."""
        return dirichlet_entropy(DirichletParams.uniform(self.reward_bins))


@dataclass(frozen=True)
class CalibrationModel:
    """Scalar temperature applied to confidence log-odds."""

    temperature: float = 1.0
    nll_before: float = float("nan")
    nll_after: float = float("nan")
    degenerate: bool = False

    def __post_init__(self) -> None:
        require(self.temperature > 0.0 and math.isfinite(self.temperature), "temperature must be > 0")

    def apply(self, confidence: Any) -> Any:
        """Calibrated confidence ``sigmoid(logit(c) / T)``; scalars in, scalars out."""
        z = _logits(confidence)
        out = special.expit(z / self.temperature)
        if np.ndim(out) == 0:
            return float(out)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "temperature": self.temperature,
            "heldout_nll_before": self.nll_before,
            "heldout_nll_after": self.nll_after,
            "degenerate": self.degenerate,
        }


def entropy_categorical(p: Any) -> float:
    """Shannon entropy ``-sum p ln p`` of a categorical distribution, with 0 ln 0 = 0."""
    arr = as_probvec(p)
    return float(np.sum(special.entr(arr)))


def confidence_from_entropy(entropy: float, n: int) -> float:
    """Map a categorical entropy onto [0,1]: 1 for a delta, 0 for uniform over ``n``."""
    require(int(n) >= 1, "category count must be >= 1")
    h_max = math.log(n) if n > 1 else 0.0
    require(-NORM_TOL <= entropy <= h_max + NORM_TOL,
            f"entropy {entropy:.6g} outside [0, ln {n}]")
    if n == 1:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - entropy / h_max)))


def _log_beta(alpha: FloatArray) -> float:
    return float(np.sum(special.gammaln(alpha)) - special.gammaln(np.sum(alpha)))


def dirichlet_entropy(d: DirichletParams) -> float:
    """Closed-form differential entropy of a Dirichlet distribution."""
    alpha = d.alpha
    a0 = float(alpha.sum())
    k = alpha.size
    return float(
        _log_beta(alpha)
        + (a0 - k) * special.digamma(a0)
        - np.sum((alpha - 1.0) * special.digamma(alpha))
    )


def squash_to_confidence(entropy: float, reference: float, scale: float) -> float:
    """Logistic map of an unbounded entropy; 0.5 at ``reference``, decreasing in entropy."""
    require(scale > 0.0, f"squash scale must be > 0, got {scale}")
    return float(special.expit(-(entropy - reference) / scale))


def epistemic_aleatoric_decompose(d: DirichletParams) -> Tuple[float, float, float]:
    """Split predictive entropy into expected (aleatoric) and mutual-information (epistemic) parts."""
    alpha = d.alpha
    a0 = float(alpha.sum())
    mean = alpha / a0
    total = float(np.sum(special.entr(mean)))
    aleatoric = float(np.sum(mean * (special.digamma(a0 + 1.0) - special.digamma(alpha + 1.0))))
    return total, aleatoric, total - aleatoric


def _unpack(samples: Iterable[Tuple[float, Any]]) -> Tuple[FloatArray, FloatArray]:
    pairs = list(samples)
    require(len(pairs) > 0, "calibration samples are empty")
    conf = np.array([float(c) for c, _ in pairs], dtype=float)
    hits = np.array([1.0 if bool(s) else 0.0 for _, s in pairs], dtype=float)
    require(bool(np.all((conf >= 0.0) & (conf <= 1.0))), "confidences must lie in [0,1]")
    return conf, hits


def _logits(confidence: Any) -> Any:
    return special.logit(np.clip(np.asarray(confidence, dtype=float), PROB_FLOOR, 1.0 - PROB_FLOOR))


def _mean_nll(z: FloatArray, y: FloatArray, inv_temperature: float) -> float:
    s = inv_temperature * z
    return float(np.mean(np.logaddexp(0.0, s) - y * s))


def _nll_slope(z: FloatArray, y: FloatArray, inv_temperature: float) -> float:
    return float(np.mean((special.expit(inv_temperature * z) - y) * z))


def _search_inverse_temperature(z: FloatArray, y: FloatArray) -> float:
    grid = [1.0 / t for t in TEMPERATURE_GRID]
    losses = [_mean_nll(z, y, b) for b in grid]
    k = int(np.argmin(losses))
    # grid is decreasing in 1/T: neighbours bracket the minimizer
    hi = grid[max(k - 1, 0)]
    lo = grid[min(k + 1, len(grid) - 1)]
    for _ in range(TEMPERATURE_REFINEMENTS):
        mid = 0.5 * (lo + hi)
        if _nll_slope(z, y, mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def fit_temperature(samples: Sequence[Tuple[float, Any]], bins: int = 10) -> CalibrationModel:
    """Fit a temperature on (confidence, success) pairs.

    Every fifth sample is held out. The temperature is searched on a doubling
    grid and refined by bisection on the slope of the log-loss in 1/T. T = 1 is
    kept when the fitted value loses on the held-out log-loss, or when it raises
    the ``bins``-bin calibration error over all of ``samples``.
    """
    conf, hits = _unpack(samples)
    require(conf.size >= MIN_CALIBRATION_SAMPLES,
            f"temperature fit needs >= {MIN_CALIBRATION_SAMPLES} samples, got {conf.size}")
    z = _logits(conf)
    held = np.arange(conf.size) % HELDOUT_STRIDE == HELDOUT_STRIDE - 1
    base_nll = _mean_nll(z[held], hits[held], 1.0)

    if hits.min() == hits.max() or float(np.max(np.abs(z))) < 1e-12:
        logger.debug("degenerate calibration set (%d samples)", conf.size)
        return CalibrationModel(1.0, base_nll, base_nll, degenerate=True)

    beta = _search_inverse_temperature(z[~held], hits[~held])
    fitted_nll = _mean_nll(z[held], hits[held], beta)
    if fitted_nll > base_nll:
        logger.debug("fitted T=%.4g loses on held-out data; keeping T=1", 1.0 / beta)
        return CalibrationModel(1.0, base_nll, base_nll)
    if _binned_error(special.expit(beta * z), hits, bins) > _binned_error(conf, hits, bins):
        logger.debug("fitted T=%.4g raises the calibration error; keeping T=1", 1.0 / beta)
        return CalibrationModel(1.0, base_nll, base_nll)
    return CalibrationModel(1.0 / beta, base_nll, fitted_nll)


def _binned_error(conf: FloatArray, hits: FloatArray, bins: int) -> float:
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    total = 0.0
    for b in range(bins):
        mask = idx == b
        n_b = int(mask.sum())
        if n_b:
            total += n_b * abs(float(hits[mask].mean()) - float(conf[mask].mean()))
    return float(total / conf.size)


def ece(samples: Sequence[Tuple[float, Any]], bins: int = 10) -> float:
    """Expected calibration error over equal-width confidence bins."""
    require(int(bins) >= 1, "ECE needs at least one bin")
    conf, hits = _unpack(samples)
    return _binned_error(conf, hits, int(bins))
