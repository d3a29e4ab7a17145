"""Supervision extraction from frame sequences.

Finds contact frames from per-frame hand annotations, projects fingertips to
the eroded object mask, then walks backward with tracked points to find the
prediction frame where the dilated hand mask no longer contains either point.
Perception (segmentation, hand pose, point tracking) is supplied by a
pluggable oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

import numpy as np
from PIL import Image

from . import geometry
from .geometry import EmptyMask, Point2D

CONTACT_CONFIDENCE_THRESHOLD = 0.9
OBJECT_EROSION_ITERATIONS = 12
HAND_DILATION_ITERATIONS = 75
MAX_LOOKBACK_FRAMES = 45
NUM_QUERY_POINTS = 10
RATIO_GATE_LO = 0.3
RATIO_GATE_HI = 1.7


@dataclass
class HandDetection:
    mask: np.ndarray
    contact_confidence: float


@dataclass
class FrameAnnotation:
    frame_index: int
    right_hand: Optional[HandDetection] = None
    left_hand: Optional[HandDetection] = None
    object_mask: Optional[np.ndarray] = None
    right_hand_count: int = 0


@dataclass
class HandPose:
    """Wrist-relative joint positions, shape (21, 3)."""

    joints: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.shape != (21, 3):
            raise ValueError(f"hand pose must be 21x3, got {self.joints.shape}")
        if not np.isfinite(self.joints).all():
            raise ValueError("hand pose contains non-finite values")

    def flat(self) -> np.ndarray:
        return self.joints.reshape(-1)


class PerceptionOracle(Protocol):
    """Stand-in for the external segmentation / pose / tracking models."""

    def annotate(self, frame_index: int) -> FrameAnnotation: ...

    def hand_pose(self, frame_index: int) -> tuple[HandPose, Point2D, Point2D]:
        """Pose plus (thumb tip, index tip) keypoints for the right hand."""
        ...

    def track_backward(
        self, points: list[Point2D], from_frame: int
    ) -> dict[int, list[Point2D]]:
        """Tracked positions of `points` for every frame <= from_frame."""
        ...


class EventStatus(str, Enum):
    OK = "ok"
    DISCARDED_RATIO = "discarded_ratio"
    DISCARDED_TIMEOUT = "discarded_timeout"
    DISCARDED_DEGENERATE_MASK = "discarded_degenerate_mask"


@dataclass
class ContactEvent:
    video_id: str
    contact_frame: int
    status: EventStatus
    prediction_frame: Optional[int] = None
    contact_points_contact_frame: Optional[tuple[Point2D, Point2D]] = None
    contact_points_prediction_frame: Optional[tuple[Point2D, Point2D]] = None
    hand_pose: Optional[HandPose] = None


def _qualifies(ann: FrameAnnotation, threshold: float) -> bool:
    right_ok = (
        ann.right_hand is not None
        and ann.right_hand.contact_confidence >= threshold
        and ann.right_hand_count == 1
    )
    left_bad = (
        ann.left_hand is not None and ann.left_hand.contact_confidence >= threshold
    )
    return right_ok and not left_bad


def identify_contact_frames(
    annotations: list[FrameAnnotation],
    confidence_threshold: float = CONTACT_CONFIDENCE_THRESHOLD,
) -> list[int]:
    """First frame index of each maximal run where exactly one right hand is
    in confident contact and no left hand is."""
    out = []
    prev = False
    for ann in annotations:
        ok = _qualifies(ann, confidence_threshold)
        if ok and not prev:
            out.append(ann.frame_index)
        prev = ok
    return out


def extract_contact_labels(
    annotation: FrameAnnotation,
    oracle: PerceptionOracle,
    erosion_iterations: int = OBJECT_EROSION_ITERATIONS,
):
    """Project thumb/index fingertips to the eroded object mask.

    Returns (pt_c pair, hand pose, eroded mask) or an EventStatus rejection.
    """
    if annotation.object_mask is None:
        return EventStatus.DISCARDED_DEGENERATE_MASK
    eroded = geometry.erode(annotation.object_mask, erosion_iterations)
    pose, thumb, index = oracle.hand_pose(annotation.frame_index)
    try:
        proj_thumb = geometry.project_point_to_mask(thumb, eroded)
        proj_index = geometry.project_point_to_mask(index, eroded)
    except EmptyMask:
        return EventStatus.DISCARDED_DEGENERATE_MASK
    if not geometry.distance_ratio_gate(
        (thumb, index), (proj_thumb, proj_index), RATIO_GATE_LO, RATIO_GATE_HI
    ):
        return EventStatus.DISCARDED_RATIO
    return (proj_thumb, proj_index), pose, eroded


def sample_query_points(mask: np.ndarray, n: int = NUM_QUERY_POINTS, seed: int = 0):
    """Greedy farthest-point sample of foreground pixel centers.

    Seeded at the pixel nearest the mask centroid; returns all foreground
    pixels when fewer than n exist. Deterministic (ties broken by (y, x)).
    """
    pix = geometry.foreground_pixels(mask)
    if len(pix) == 0:
        raise EmptyMask("cannot sample from an empty mask")
    centers = pix[:, ::-1].astype(np.float64) + 0.5  # (x, y)
    if len(pix) <= n:
        return [Point2D(x, y) for x, y in centers]
    centroid = centers.mean(axis=0)
    d2 = ((centers - centroid) ** 2).sum(axis=1)
    selected = [int(np.argmin(d2))]
    min_d2 = ((centers - centers[selected[0]]) ** 2).sum(axis=1)
    while len(selected) < n:
        nxt = int(np.argmax(min_d2))
        selected.append(nxt)
        min_d2 = np.minimum(min_d2, ((centers - centers[nxt]) ** 2).sum(axis=1))
    return [Point2D(*centers[i]) for i in selected]


def find_prediction_frame(
    video_id: str,
    contact_frame: int,
    contact_points: tuple[Point2D, Point2D],
    hand_pose: HandPose,
    oracle: PerceptionOracle,
    hand_dilation_iterations: int = HAND_DILATION_ITERATIONS,
    max_lookback: int = MAX_LOOKBACK_FRAMES,
) -> ContactEvent:
    """Walk backward from the contact frame until the dilated right-hand mask
    contains neither tracked contact point; that frame becomes the prediction
    frame. Frames with no detected right hand qualify immediately."""
    tracked = oracle.track_backward(list(contact_points), contact_frame)
    for frame in range(contact_frame - 1, contact_frame - 1 - max_lookback, -1):
        if frame < 0:
            break
        pts = tracked.get(frame)
        if pts is None:
            break
        ann = oracle.annotate(frame)
        if ann.right_hand is not None:
            expanded = geometry.dilate(ann.right_hand.mask, hand_dilation_iterations)
            if any(geometry.mask_contains(expanded, p) for p in pts):
                continue
        return ContactEvent(
            video_id=video_id,
            contact_frame=contact_frame,
            prediction_frame=frame,
            contact_points_contact_frame=contact_points,
            contact_points_prediction_frame=(pts[0], pts[1]),
            hand_pose=hand_pose,
            status=EventStatus.OK,
        )
    return ContactEvent(
        video_id=video_id,
        contact_frame=contact_frame,
        status=EventStatus.DISCARDED_TIMEOUT,
    )


@dataclass
class ExtractionConfig:
    confidence_threshold: float = CONTACT_CONFIDENCE_THRESHOLD
    erosion_iterations: int = OBJECT_EROSION_ITERATIONS
    hand_dilation_iterations: int = HAND_DILATION_ITERATIONS
    max_lookback: int = MAX_LOOKBACK_FRAMES
    num_query_points: int = NUM_QUERY_POINTS
    seed: int = 0


def extract_events(
    video_id: str,
    num_frames: int,
    oracle: PerceptionOracle,
    config: ExtractionConfig = ExtractionConfig(),
) -> list[ContactEvent]:
    """Run the full extraction pipeline over one frame sequence."""
    annotations = [oracle.annotate(i) for i in range(num_frames)]
    events = []
    for fc in identify_contact_frames(annotations, config.confidence_threshold):
        ann = annotations[fc]
        labels = extract_contact_labels(ann, oracle, config.erosion_iterations)
        if isinstance(labels, EventStatus):
            events.append(ContactEvent(video_id=video_id, contact_frame=fc, status=labels))
            continue
        (pt_thumb, pt_index), pose, eroded = labels
        # query points support the tracker; the supervision is the fingertips
        sample_query_points(eroded, config.num_query_points, config.seed)
        events.append(
            find_prediction_frame(
                video_id, fc, (pt_thumb, pt_index), pose, oracle,
                config.hand_dilation_iterations, config.max_lookback,
            )
        )
    return events


# ---------------------------------------------------------------------------
# Manifest I/O


@dataclass
class ManifestRecord:
    sample_id: str
    video_id: str
    contact_frame: int
    prediction_frame: int
    image_path: str
    thumb_xy: tuple[float, float]
    index_xy: tuple[float, float]
    hand_pose: list[float]  # 63 numbers
    tokens: Optional[list[int]]  # 8 ints, filled after tokenizer training
    status: str = "ok"

    def to_json(self) -> str:
        return json.dumps(
            {
                "sample_id": self.sample_id,
                "video_id": self.video_id,
                "contact_frame": self.contact_frame,
                "prediction_frame": self.prediction_frame,
                "image_path": self.image_path,
                "thumb_xy": list(self.thumb_xy),
                "index_xy": list(self.index_xy),
                "hand_pose": self.hand_pose,
                "tokens": self.tokens,
                "status": self.status,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "ManifestRecord":
        d = json.loads(line)
        return ManifestRecord(
            sample_id=d["sample_id"],
            video_id=d["video_id"],
            contact_frame=d["contact_frame"],
            prediction_frame=d["prediction_frame"],
            image_path=d["image_path"],
            thumb_xy=tuple(d["thumb_xy"]),
            index_xy=tuple(d["index_xy"]),
            hand_pose=d["hand_pose"],
            tokens=d["tokens"],
            status=d["status"],
        )


def write_manifest(records: list[ManifestRecord], path) -> None:
    records = sorted(records, key=lambda r: (r.video_id, r.contact_frame))
    with open(path, "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    with open(path) as f:
        return [ManifestRecord.from_json(line) for line in f if line.strip()]


@dataclass
class DatasetResult:
    records: list[ManifestRecord] = field(default_factory=list)
    status_counts: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)


def build_dataset(
    videos,
    oracle_factory,
    output_dir,
    config: ExtractionConfig = ExtractionConfig(),
    frame_getter=None,
) -> DatasetResult:
    """Extract events for every video and write images plus a manifest.

    `videos` yields (video_id, num_frames); `oracle_factory(video_id)` returns
    the perception oracle for that video; `frame_getter(video_id, frame)`
    returns an RGB uint8 array for the prediction frame (optional).
    Per-video failures are recorded without aborting the batch.
    """
    import os

    os.makedirs(output_dir, exist_ok=True)
    img_dir = os.path.join(output_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    result = DatasetResult(status_counts={s.value: 0 for s in EventStatus})
    for video_id, num_frames in videos:
        try:
            events = extract_events(video_id, num_frames, oracle_factory(video_id), config)
        except (OSError, ValueError) as e:
            result.failures.append(f"{video_id}: {e}")
            continue
        for ev in events:
            result.status_counts[ev.status.value] += 1
            if ev.status is not EventStatus.OK:
                continue
            sample_id = f"{video_id}_{ev.contact_frame:06d}"
            image_path = os.path.join("images", f"{sample_id}.png")
            if frame_getter is not None:
                frame = frame_getter(video_id, ev.prediction_frame)
                Image.fromarray(frame).save(os.path.join(output_dir, image_path))
            thumb, index = ev.contact_points_prediction_frame
            result.records.append(
                ManifestRecord(
                    sample_id=sample_id,
                    video_id=video_id,
                    contact_frame=ev.contact_frame,
                    prediction_frame=ev.prediction_frame,
                    image_path=image_path,
                    thumb_xy=(thumb.x, thumb.y),
                    index_xy=(index.x, index.y),
                    hand_pose=[float(v) for v in ev.hand_pose.flat()],
                    tokens=None,
                )
            )
    write_manifest(result.records, os.path.join(output_dir, "manifest.jsonl"))
    with open(os.path.join(output_dir, "summary.json"), "w") as f:
        json.dump({"status_counts": result.status_counts,
                   "failures": result.failures}, f, sort_keys=True, indent=2)
    return result
