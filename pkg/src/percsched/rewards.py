"""Per-module reward models.

Detection is rewarded by the entropy reduction a measurement would bring to
the Kalman box estimates: half the relevance-weighted log ratio between the
determinant of the predicted covariance in measurement space and the
determinant of the measurement noise. Pose is rewarded by the drop from a
box-level uniform entropy to the Gaussian entropy of the keypoints the
module would produce, with per-keypoint sigmas mapped from extrapolated
confidence scores.

All entropies are in nats; the cost multiplier converts milliseconds of
inference into nats through ``lambda_info_per_ms``.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .scene import DETECTION, POSE, ModuleId
from .tracker import KalmanConfig, NumericalError, TrackState, measurement_covariance, measurement_noise

LN_TWO_PI_E = math.log(2.0 * math.pi * math.e)

DEFAULT_KEYPOINT_COUNT = 133
UNIFORM_SIGMA_BASE = 0.05


def coco_wholebody_sigmas() -> Tuple[float, ...]:
    """The 133 normalized per-keypoint sigmas shipped with the package."""
    ref = importlib.resources.files("percsched").joinpath("data/coco_wholebody_sigmas.json")
    payload = json.loads(ref.read_text())
    return tuple(float(s) for s in payload["sigmas"])


def load_sigma_base(path) -> Tuple[float, ...]:
    """Read a per-keypoint sigma table from a data file.

    Accepts a JSON array, a JSON object with a ``sigmas`` key, or plain
    whitespace-separated floats.
    """
    from pathlib import Path

    text = Path(path).read_text(encoding="utf-8").strip()
    try:
        payload = json.loads(text)
        values = payload["sigmas"] if isinstance(payload, dict) else payload
    except json.JSONDecodeError:
        values = text.split()
    sigmas = tuple(float(v) for v in values)
    if not sigmas or any(s <= 0 for s in sigmas):
        raise ValueError(f"sigma table at {path} must hold positive reals")
    return sigmas


@dataclass(frozen=True)
class RewardConfig:
    """Knobs shared by both reward models.

    ``sigma_base`` holds normalized per-keypoint base sigmas; they are
    multiplied by the object scale sqrt(w*h) where the pose entropy is
    evaluated. Leave it ``None`` to use the packaged COCO-WholeBody table
    when ``keypoint_count`` is 133 and a uniform 0.05 table otherwise.
    """

    lambda_info_per_ms: float
    cost_ms: Mapping[ModuleId, float] = field(
        default_factory=lambda: {DETECTION: 15.0, POSE: 80.0}
    )
    keypoint_count: int = DEFAULT_KEYPOINT_COUNT
    sigma_base: Optional[Tuple[float, ...]] = None
    confidence_floor: float = 1e-6
    sigma_floor: float = 1e-3
    prior_confidence: float = 0.5

    def __post_init__(self) -> None:
        if self.lambda_info_per_ms < 0:
            raise ValueError("lambda_info_per_ms must be non-negative")
        for module, cost in self.cost_ms.items():
            if cost <= 0:
                raise ValueError(f"cost for module {module!r} must be positive, got {cost}")
        if self.keypoint_count <= 0:
            raise ValueError("keypoint_count must be positive")
        if not 0.0 < self.confidence_floor < 1.0:
            raise ValueError("confidence_floor must lie in (0, 1)")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")
        if not 0.0 < self.prior_confidence <= 1.0:
            raise ValueError("prior_confidence must lie in (0, 1]")
        if self.sigma_base is not None:
            if len(self.sigma_base) != self.keypoint_count:
                raise ValueError(
                    f"sigma_base has {len(self.sigma_base)} entries, "
                    f"expected keypoint_count={self.keypoint_count}"
                )
            if any(s <= 0 for s in self.sigma_base):
                raise ValueError("sigma_base entries must be positive")

    def resolved_sigma_base(self) -> np.ndarray:
        if self.sigma_base is not None:
            return np.asarray(self.sigma_base, dtype=float)
        if self.keypoint_count == 133:
            return np.asarray(coco_wholebody_sigmas(), dtype=float)
        return np.full(self.keypoint_count, UNIFORM_SIGMA_BASE)


@dataclass(frozen=True)
class RewardBreakdown:
    """Net reward for one module at one frame."""

    module: ModuleId
    info_gain_nats: float
    cost_penalty_nats: float
    net: float
    forced: bool = False


def _breakdown(module: ModuleId, gain: float, forced: bool, cfg: RewardConfig) -> RewardBreakdown:
    penalty = cfg.lambda_info_per_ms * cfg.cost_ms[module]
    return RewardBreakdown(
        module=module,
        info_gain_nats=gain,
        cost_penalty_nats=penalty,
        net=gain - penalty,
        forced=forced,
    )


def detection_info_gain(
    tracks: Sequence[Tuple[TrackState, float]],
    cfg: RewardConfig,
    kalman_cfg: KalmanConfig,
) -> float:
    """Relevance-weighted entropy reduction over all tracked boxes.

    Each track contributes 0.5 * r * ln(det(projected prior) / det(R)) with
    R the same height-scaled measurement noise an update would use.
    Zero-relevance tracks contribute nothing.
    """
    total = 0.0
    for track, relevance in tracks:
        if relevance == 0.0:
            continue
        projected = measurement_covariance(track)
        sign, logdet_p = np.linalg.slogdet(projected)
        if sign <= 0:
            raise NumericalError(
                f"projected covariance for track {track.entity_id!r} is not positive definite"
            )
        r = measurement_noise(track.mean[3], kalman_cfg)
        logdet_r = float(np.sum(np.log(np.diag(r))))
        total += 0.5 * relevance * (float(logdet_p) - logdet_r)
    return total


def detection_reward(gain: float, forced: bool, cfg: RewardConfig) -> RewardBreakdown:
    if not math.isfinite(gain):
        raise ValueError(f"gain must be finite, got {gain}")
    return _breakdown(DETECTION, gain, forced, cfg)


def box_uniform_entropy(w: float, h: float) -> float:
    """Entropy of a point uniformly distributed over a w-by-h box, in nats."""
    if w <= 0 or h <= 0:
        raise ValueError(f"box dims must be positive, got w={w}, h={h}")
    return math.log(w * h)


def pre_execution_entropy(
    humans: Sequence[Tuple[float, float, float, float, float]],
    cfg: RewardConfig,
) -> float:
    """Keypoint uncertainty before the pose module runs.

    Each human contributes relevance * ln((w + sigma_w) * (h + sigma_h)),
    the uniform-box entropy widened by the prior box uncertainty, and the
    sum is multiplied by the keypoint count.
    """
    total = 0.0
    for w, h, sigma_w, sigma_h, relevance in humans:
        ww = w + sigma_w
        hh = h + sigma_h
        if ww <= 0 or hh <= 0:
            raise ValueError("widened box dims must be positive")
        total += relevance * math.log(ww * hh)
    return cfg.keypoint_count * total


def extrapolate_confidence(
    s_last: float,
    s_prev: float,
    k_last: int,
    k_prev: int,
    k: int,
    cfg: RewardConfig,
) -> float:
    """Linear confidence extrapolation from the last two executions,
    clamped to [confidence_floor, 1]."""
    if k_last == k_prev:
        raise ValueError("the two reference frames must differ")
    slope = (s_last - s_prev) / (k_last - k_prev)
    value = s_last + slope * (k - k_last)
    return min(1.0, max(cfg.confidence_floor, value))


def keypoint_sigma(conf: float, base: float, cfg: RewardConfig) -> float:
    """Map a confidence score to a pixel std via a negative log, floored."""
    if not 0.0 < conf <= 1.0:
        raise ValueError(f"confidence must lie in (0, 1], got {conf}")
    if base <= 0:
        raise ValueError(f"base sigma must be positive, got {base}")
    return max(-base * math.log(conf), cfg.sigma_floor)


def keypoint_entropy(sigma: float) -> float:
    """Entropy of an isotropic 2D Gaussian keypoint estimate, in nats."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return LN_TWO_PI_E + 2.0 * math.log(sigma)


HumanConfidences = Union[
    Tuple[Sequence[float], float],
    Tuple[Sequence[float], float, float],
]


def post_execution_entropy(humans: Sequence[HumanConfidences], cfg: RewardConfig) -> float:
    """Keypoint uncertainty the pose module is expected to leave behind.

    Each entry is (confidences, relevance) or (confidences, relevance,
    scale); confidences must already be extrapolated to the current frame
    and have exactly ``keypoint_count`` values. ``scale`` multiplies the
    base sigmas (object scale, default 1).
    """
    base = cfg.resolved_sigma_base()
    total = 0.0
    for entry in humans:
        confs = np.asarray(entry[0], dtype=float)
        relevance = float(entry[1])
        scale = float(entry[2]) if len(entry) > 2 else 1.0
        if confs.shape != (cfg.keypoint_count,):
            raise ValueError(
                f"expected {cfg.keypoint_count} confidences, got {confs.shape}"
            )
        inner = cfg.keypoint_count * LN_TWO_PI_E
        for d in range(cfg.keypoint_count):
            sigma = keypoint_sigma(float(confs[d]), float(base[d] * scale), cfg)
            inner += 2.0 * math.log(sigma)
        total += relevance * inner
    return total


def pose_reward(pre: float, post: float, forced: bool, cfg: RewardConfig) -> RewardBreakdown:
    if not (math.isfinite(pre) and math.isfinite(post)):
        raise ValueError("entropies must be finite")
    return _breakdown(POSE, pre - post, forced, cfg)


class KeypointConfidenceHistory:
    """Rolling record of the last two pose executions per human.

    With two samples confidences are linearly extrapolated per keypoint;
    with one the last value is held; with none a configurable prior applies.
    """

    def __init__(self) -> None:
        self._last: Dict[str, Tuple[int, np.ndarray]] = {}
        self._prev: Dict[str, Tuple[int, np.ndarray]] = {}

    def record(self, entity_id: str, frame_index: int, confidences: Sequence[float]) -> None:
        confs = np.asarray(confidences, dtype=float)
        current = self._last.get(entity_id)
        if current is not None:
            if frame_index == current[0]:
                self._last[entity_id] = (frame_index, confs)
                return
            if frame_index < current[0]:
                raise ValueError("confidence samples must arrive in frame order")
            self._prev[entity_id] = current
        self._last[entity_id] = (frame_index, confs)

    def extrapolated(self, entity_id: str, frame_index: int, cfg: RewardConfig) -> np.ndarray:
        last = self._last.get(entity_id)
        if last is None:
            return np.full(cfg.keypoint_count, cfg.prior_confidence)
        prev = self._prev.get(entity_id)
        if prev is None or frame_index < last[0]:
            return np.clip(last[1], cfg.confidence_floor, 1.0)
        out = np.empty_like(last[1])
        for d in range(out.shape[0]):
            out[d] = extrapolate_confidence(
                float(last[1][d]), float(prev[1][d]), last[0], prev[0], frame_index, cfg
            )
        return out

    def forget(self, entity_id: str) -> None:
        self._last.pop(entity_id, None)
        self._prev.pop(entity_id, None)
