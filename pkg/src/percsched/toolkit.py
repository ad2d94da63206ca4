"""The schedulable module pool: specs, output types and two backends.

Simulated modules read ground truth from the trace and perturb it with
configurable, seed-deterministic noise; replay modules serve pre-recorded
outputs from a JSONL log. Both honor the same timing rule: an output
becomes visible at the first frame boundary at or after issue time plus
inference time.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .scene import DEFAULT_FRAME_PERIOD_MS, EntityKind, FrameStamp, ModuleId
from .traces import TraceFrame

REPLAY_SCHEMA = "percsched-replay"
REPLAY_VERSION = 1


class OutputKind(str, Enum):
    DETECTIONS = "detections"
    KEYPOINTS = "keypoints"


@dataclass(frozen=True)
class ModuleSpec:
    id: ModuleId
    inference_ms: float
    output_kind: OutputKind

    def __post_init__(self) -> None:
        if self.inference_ms <= 0:
            raise ValueError("inference_ms must be positive")


@dataclass(frozen=True)
class DetectedBox:
    entity_id: str
    x_c: float
    y_c: float
    w: float
    h: float
    score: float


@dataclass(frozen=True)
class DetectionOutput:
    stamp_issued: FrameStamp
    stamp_ready: FrameStamp
    boxes: Tuple[DetectedBox, ...]


@dataclass(frozen=True)
class HumanPose:
    entity_id: str
    keypoints: Tuple[Tuple[float, float, float], ...]  # (x, y, confidence)


@dataclass(frozen=True)
class PoseOutput:
    stamp_issued: FrameStamp
    stamp_ready: FrameStamp
    per_human: Tuple[HumanPose, ...]


@dataclass(frozen=True)
class NoiseConfig:
    """Perturbation profile for the simulated backends.

    With everything at zero the outputs are exact: boxes equal ground truth
    and every keypoint confidence is ``1 - floor_margin``. A nonzero
    ``confidence_spread`` subtracts a Beta-distributed amount from that
    level, giving a skewed confidence profile.
    """

    box_std: float = 0.0
    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    keypoint_std: float = 0.0
    floor_margin: float = 0.95
    confidence_spread: float = 0.0
    beta_a: float = 2.0
    beta_b: float = 5.0
    min_confidence: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 <= self.floor_margin < 1.0:
            raise ValueError("floor_margin must lie in [0, 1)")
        for name in ("box_std", "miss_rate", "false_positive_rate", "keypoint_std",
                     "confidence_spread"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.min_confidence < 1.0:
            raise ValueError("min_confidence must lie in (0, 1)")


def ready_stamp(
    issue_time_ms: float,
    inference_ms: float,
    frame_period_ms: float = DEFAULT_FRAME_PERIOD_MS,
) -> FrameStamp:
    """First frame boundary at or after completion of the inference."""
    done = issue_time_ms + inference_ms
    index = int(math.ceil(done / frame_period_ms - 1e-9))
    return FrameStamp.at(index, frame_period_ms)


def _rng_for(seed: int, frame_index: int, module: ModuleId) -> np.random.Generator:
    """Deterministic per-(seed, frame, module) generator; no salted hashing."""
    return np.random.default_rng([seed, frame_index, zlib.crc32(module.encode("utf-8"))])


def simulate_detection(
    frame: TraceFrame,
    spec: ModuleSpec,
    noise_cfg: NoiseConfig,
    rng_seed: int,
    frame_period_ms: float = DEFAULT_FRAME_PERIOD_MS,
) -> DetectionOutput:
    """Detector stand-in: ground-truth boxes plus Gaussian perturbation."""
    rng = _rng_for(rng_seed, frame.stamp.index, spec.id)
    boxes: List[DetectedBox] = []
    for e in frame.entities:
        if e.kind is EntityKind.BACKGROUND:
            continue
        if noise_cfg.miss_rate > 0 and rng.random() < noise_cfg.miss_rate:
            continue
        cx, cy = e.region.center
        w, h = e.region.w, e.region.h
        if noise_cfg.box_std > 0:
            jitter = rng.normal(0.0, noise_cfg.box_std, size=4)
            cx, cy = cx + jitter[0], cy + jitter[1]
            w = max(1.0, w + jitter[2])
            h = max(1.0, h + jitter[3])
        boxes.append(
            DetectedBox(entity_id=e.id, x_c=float(cx), y_c=float(cy),
                        w=float(w), h=float(h), score=1.0)
        )
    if noise_cfg.false_positive_rate > 0 and rng.random() < noise_cfg.false_positive_rate:
        fx = float(rng.uniform(50, 500))
        fy = float(rng.uniform(50, 350))
        boxes.append(
            DetectedBox(
                entity_id=f"spurious-{frame.stamp.index}",
                x_c=fx, y_c=fy, w=float(rng.uniform(20, 60)),
                h=float(rng.uniform(20, 60)), score=0.4,
            )
        )
    return DetectionOutput(
        stamp_issued=frame.stamp,
        stamp_ready=ready_stamp(frame.stamp.time_ms, spec.inference_ms, frame_period_ms),
        boxes=tuple(boxes),
    )


def simulate_pose(
    frame: TraceFrame,
    spec: ModuleSpec,
    noise_cfg: NoiseConfig,
    rng_seed: int,
    frame_period_ms: float = DEFAULT_FRAME_PERIOD_MS,
) -> PoseOutput:
    """Pose stand-in: ground-truth keypoints with noise and Beta confidences."""
    rng = _rng_for(rng_seed, frame.stamp.index, spec.id)
    per_human: List[HumanPose] = []
    for e in frame.entities:
        if e.kind is not EntityKind.HUMAN:
            continue
        true_pts = frame.keypoints.get(e.id)
        if true_pts is None:
            continue
        pts: List[Tuple[float, float, float]] = []
        for x, y in true_pts:
            if noise_cfg.keypoint_std > 0:
                dx, dy = rng.normal(0.0, noise_cfg.keypoint_std, size=2)
                x, y = x + dx, y + dy
            conf = 1.0 - noise_cfg.floor_margin
            if noise_cfg.confidence_spread > 0:
                conf -= noise_cfg.confidence_spread * float(
                    rng.beta(noise_cfg.beta_a, noise_cfg.beta_b)
                )
            conf = min(1.0, max(noise_cfg.min_confidence, conf))
            pts.append((float(x), float(y), float(conf)))
        per_human.append(HumanPose(entity_id=e.id, keypoints=tuple(pts)))
    return PoseOutput(
        stamp_issued=frame.stamp,
        stamp_ready=ready_stamp(frame.stamp.time_ms, spec.inference_ms, frame_period_ms),
        per_human=tuple(per_human),
    )


# ---------------------------------------------------------------------------
# replay backend
# ---------------------------------------------------------------------------


def output_to_dict(module: ModuleId, output: Union[DetectionOutput, PoseOutput]) -> dict:
    rec: dict = {
        "record": "output",
        "module": module,
        "issued": output.stamp_issued.index,
        "issued_ms": output.stamp_issued.time_ms,
        "ready": output.stamp_ready.index,
        "ready_ms": output.stamp_ready.time_ms,
    }
    if isinstance(output, DetectionOutput):
        rec["kind"] = OutputKind.DETECTIONS.value
        rec["boxes"] = [
            [b.entity_id, b.x_c, b.y_c, b.w, b.h, b.score] for b in output.boxes
        ]
    else:
        rec["kind"] = OutputKind.KEYPOINTS.value
        rec["per_human"] = [
            {"id": hp.entity_id, "keypoints": [[x, y, c] for x, y, c in hp.keypoints]}
            for hp in output.per_human
        ]
    return rec


def output_from_dict(rec: dict) -> Union[DetectionOutput, PoseOutput]:
    issued = FrameStamp(index=rec["issued"], time_ms=rec["issued_ms"])
    ready = FrameStamp(index=rec["ready"], time_ms=rec["ready_ms"])
    if rec["kind"] == OutputKind.DETECTIONS.value:
        return DetectionOutput(
            stamp_issued=issued,
            stamp_ready=ready,
            boxes=tuple(DetectedBox(*row) for row in rec["boxes"]),
        )
    return PoseOutput(
        stamp_issued=issued,
        stamp_ready=ready,
        per_human=tuple(
            HumanPose(
                entity_id=h["id"],
                keypoints=tuple((x, y, c) for x, y, c in h["keypoints"]),
            )
            for h in rec["per_human"]
        ),
    )


def write_replay_log(
    path: Union[str, Path],
    outputs: Sequence[Tuple[ModuleId, Union[DetectionOutput, PoseOutput]]],
) -> None:
    path = Path(path)
    header = {"record": "header", "schema": REPLAY_SCHEMA, "version": REPLAY_VERSION}
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for module, output in outputs:
            fh.write(json.dumps(output_to_dict(module, output), separators=(",", ":")) + "\n")


class ReplayLookupError(KeyError):
    """Requested frame or module is not present in a replay log."""


def replay_output(
    log_path: Union[str, Path],
    stamp: FrameStamp,
    module: ModuleId,
) -> Union[DetectionOutput, PoseOutput]:
    """Return the recorded output the module issued at the given frame.

    A missing frame raises :class:`ReplayLookupError` naming the nearest
    recorded frame for that module.
    """
    log_path = Path(log_path)
    by_frame: Dict[int, dict] = {}
    module_seen = False
    with log_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("record") != "output" or rec.get("module") != module:
                continue
            module_seen = True
            by_frame[rec["issued"]] = rec
    if not module_seen:
        raise ReplayLookupError(f"no outputs logged for module {module!r}")
    rec = by_frame.get(stamp.index)
    if rec is None:
        nearest = min(by_frame, key=lambda i: abs(i - stamp.index))
        raise ReplayLookupError(
            f"module {module!r} has no output for frame {stamp.index}; "
            f"nearest recorded frame is {nearest}"
        )
    return output_from_dict(rec)
