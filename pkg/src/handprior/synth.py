"""Deterministic synthetic data generators with known ground truth.

Approach sequences exercise the full extraction pipeline (the generator
computes the true contact/prediction frames with an independent L1 distance
oracle); pose corpora are prototype-plus-noise mixtures for the tokenizer;
prior datasets are disk scenes with boundary contact points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .extraction import (
    ContactEvent,
    EventStatus,
    FrameAnnotation,
    HandDetection,
    HandPose,
    HAND_DILATION_ITERATIONS,
    MAX_LOOKBACK_FRAMES,
    OBJECT_EROSION_ITERATIONS,
)
from .geometry import Point2D
from .prior_model import PredictionSample


class InvalidSpec(ValueError):
    pass


@dataclass
class SynthSceneSpec:
    frame_size: int = 192
    object_center: tuple[float, float] = (96.5, 96.5)
    object_radius: float = 18.0
    hand_radius: float = 8.0
    approach_direction: tuple[float, float] = (1.0, 0.0)  # unit vector of travel
    approach_speed: float = 6.0      # px per frame
    contact_frame: int = 30
    num_frames: int = 40
    fingertip_offsets: tuple = ((-2.0, 0.0), (2.0, 0.0))  # thumb, index
    seed: int = 0

    def __post_init__(self):
        if self.contact_frame >= self.num_frames:
            raise InvalidSpec("contact_frame must lie inside the sequence")
        if self.object_radius <= 0 or self.hand_radius <= 0:
            raise InvalidSpec("radii must be positive")
        n = float(np.hypot(*self.approach_direction))
        if n == 0:
            raise InvalidSpec("approach_direction must be nonzero")
        self.approach_direction = (self.approach_direction[0] / n,
                                   self.approach_direction[1] / n)


def _disk_mask(size: int, center, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return (xx - center[0]) ** 2 + (yy - center[1]) ** 2 < radius**2


def l1_distance_to_mask(point: Point2D, mask: np.ndarray) -> float:
    """Brute-force Manhattan distance from the point's pixel to the nearest
    foreground pixel (inf for an empty mask). Independent oracle; do not
    replace with the morphology routines it is used to verify."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return float("inf")
    ix, iy = int(np.floor(point.x)), int(np.floor(point.y))
    return float(np.min(np.abs(ys - iy) + np.abs(xs - ix)))


@dataclass
class SyntheticSequence:
    spec: SynthSceneSpec
    annotations: list[FrameAnnotation]
    hand_pose: HandPose
    fingertips: tuple[Point2D, Point2D]
    ground_truth: ContactEvent
    hand_centers: list[Optional[tuple[float, float]]] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return len(self.annotations)

    def frame_image(self, index: int) -> np.ndarray:
        """RGB render of one frame: object disk plus hand blob."""
        size = self.spec.frame_size
        img = np.full((size, size, 3), 30, dtype=np.uint8)
        obj = _disk_mask(size, self.spec.object_center, self.spec.object_radius)
        img[obj] = (70, 130, 200)
        hc = self.hand_centers[index]
        if hc is not None:
            hand = _disk_mask(size, hc, self.spec.hand_radius)
            img[hand] = (210, 160, 120)
        return img


class SyntheticOracle:
    """Perception oracle backed by a generated sequence: exact annotations,
    the stored hand pose/fingertips, and static-object point tracking."""

    def __init__(self, sequence: SyntheticSequence):
        self.sequence = sequence

    def annotate(self, frame_index: int) -> FrameAnnotation:
        return self.sequence.annotations[frame_index]

    def hand_pose(self, frame_index: int):
        thumb, index = self.sequence.fingertips
        return self.sequence.hand_pose, thumb, index

    def track_backward(self, points, from_frame: int):
        # the object never moves, so tracked positions are constant
        return {t: list(points) for t in range(from_frame + 1)}


def _hand_center_at(spec: SynthSceneSpec, frame: int):
    """Hand blob center; None once the blob has fully left the canvas."""
    dx, dy = spec.approach_direction
    dist = spec.approach_speed * max(spec.contact_frame - frame, 0)
    contact_x = spec.object_center[0] - dx * (spec.object_radius + spec.hand_radius - 2.0)
    contact_y = spec.object_center[1] - dy * (spec.object_radius + spec.hand_radius - 2.0)
    cx = contact_x - dx * dist
    cy = contact_y - dy * dist
    margin = spec.hand_radius
    if (cx < -margin or cy < -margin
            or cx > spec.frame_size + margin or cy > spec.frame_size + margin):
        return None
    return (cx, cy)


def generate_approach_sequence(spec: SynthSceneSpec):
    """Build a hand-approaches-object sequence plus its ground-truth event.

    Returns (sequence, oracle). The ground-truth prediction frame and status
    are computed with the brute-force L1 oracle, not the extraction code."""
    rng = np.random.default_rng(spec.seed)
    size = spec.frame_size
    object_mask = _disk_mask(size, spec.object_center, spec.object_radius)

    annotations = []
    hand_centers = []
    for t in range(spec.num_frames):
        hc = _hand_center_at(spec, t)
        hand_centers.append(hc)
        right = None
        conf = 0.95 if t >= spec.contact_frame else 0.2
        if hc is not None:
            hand_mask = _disk_mask(size, hc, spec.hand_radius)
            if hand_mask.any():
                right = HandDetection(mask=hand_mask, contact_confidence=conf)
        annotations.append(FrameAnnotation(
            frame_index=t,
            right_hand=right,
            object_mask=object_mask.copy(),
            right_hand_count=1 if right is not None else 0,
        ))

    pose = HandPose(rng.normal(0.0, 0.1, size=(21, 3)))
    ox, oy = spec.object_center
    thumb = Point2D(ox + spec.fingertip_offsets[0][0], oy + spec.fingertip_offsets[0][1])
    index = Point2D(ox + spec.fingertip_offsets[1][0], oy + spec.fingertip_offsets[1][1])

    ground_truth = _ground_truth_event(spec, annotations, (thumb, index), pose)
    seq = SyntheticSequence(
        spec=spec,
        annotations=annotations,
        hand_pose=pose,
        fingertips=(thumb, index),
        ground_truth=ground_truth,
        hand_centers=hand_centers,
    )
    return seq, SyntheticOracle(seq)


def _erosion_survives(spec: SynthSceneSpec, iterations: int) -> bool:
    # a Euclidean disk survives k cross-element erosions iff its radius
    # exceeds k (the L1 ball of radius k fits inside along the axes)
    return spec.object_radius > iterations + 1.0


def _ground_truth_event(spec, annotations, fingertips, pose) -> ContactEvent:
    fc = spec.contact_frame
    video_id = f"synth{spec.seed:04d}"
    if not _erosion_survives(spec, OBJECT_EROSION_ITERATIONS):
        return ContactEvent(video_id=video_id, contact_frame=fc,
                            status=EventStatus.DISCARDED_DEGENERATE_MASK)
    # fingertip offsets are chosen inside the eroded disk, so projection is
    # the identity and the tracked points stay fixed
    for f in range(fc - 1, fc - 1 - MAX_LOOKBACK_FRAMES, -1):
        if f < 0:
            break
        right = annotations[f].right_hand
        if right is None:
            contained = False
        else:
            contained = any(
                l1_distance_to_mask(p, right.mask) <= HAND_DILATION_ITERATIONS
                for p in fingertips
            )
        if not contained:
            return ContactEvent(
                video_id=video_id, contact_frame=fc, prediction_frame=f,
                contact_points_contact_frame=fingertips,
                contact_points_prediction_frame=fingertips,
                hand_pose=pose, status=EventStatus.OK,
            )
    return ContactEvent(video_id=video_id, contact_frame=fc,
                        status=EventStatus.DISCARDED_TIMEOUT)


def make_scene_corpus(n: int, base_seed: int = 0, timeout_every: int = 0,
                      degenerate_every: int = 0) -> list[SynthSceneSpec]:
    """n scene specs with varied geometry; every `timeout_every`-th keeps the
    hand hovering (timeout) and every `degenerate_every`-th uses an object
    too small to survive erosion."""
    specs = []
    for i in range(n):
        rng = np.random.default_rng((base_seed, i))
        angle = rng.uniform(0, 2 * np.pi)
        spec_kwargs = dict(
            approach_direction=(float(np.cos(angle)), float(np.sin(angle))),
            approach_speed=float(rng.uniform(5.0, 8.0)),
            contact_frame=int(rng.integers(25, 35)),
            num_frames=45,
            seed=base_seed * 1000 + i,
        )
        if degenerate_every and (i + 1) % degenerate_every == 0:
            spec_kwargs["object_radius"] = 8.0
        elif timeout_every and (i + 1) % timeout_every == 0:
            spec_kwargs["approach_speed"] = 0.5
        specs.append(SynthSceneSpec(**spec_kwargs))
    return specs


# ---------------------------------------------------------------------------
# Pose corpora


@dataclass
class SynthPoseSpec:
    num_prototypes: int = 50
    noise_std: float = 0.02
    corpus_size: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.num_prototypes < 1 or self.corpus_size < 0 or self.noise_std < 0:
            raise InvalidSpec("invalid pose spec")


@dataclass
class PoseCorpus:
    poses: list[HandPose]
    prototypes: np.ndarray           # (P, 21, 3)
    assignments: np.ndarray          # (corpus_size,) prototype index per pose


def generate_pose_corpus(spec: SynthPoseSpec) -> PoseCorpus:
    """Prototype poses plus i.i.d. Gaussian joint noise, seeded."""
    rng = np.random.default_rng(spec.seed)
    prototypes = rng.normal(0.0, 0.3, size=(spec.num_prototypes, 21, 3))
    assignments = rng.integers(0, spec.num_prototypes, size=spec.corpus_size)
    poses = [
        HandPose(prototypes[a] + rng.normal(0.0, spec.noise_std, size=(21, 3)))
        for a in assignments
    ]
    return PoseCorpus(poses=poses, prototypes=prototypes, assignments=assignments)


def per_prototype_mean_error(corpus: PoseCorpus, holdout: PoseCorpus) -> float:
    """Oracle for the tokenizer noise floor: reconstruct each held-out pose
    as the training-corpus mean of its prototype, and report the mean
    per-joint Euclidean error."""
    train = np.stack([p.joints for p in corpus.poses])
    means = {}
    for proto in np.unique(corpus.assignments):
        means[proto] = train[corpus.assignments == proto].mean(axis=0)
    errs = []
    for pose, a in zip(holdout.poses, holdout.assignments):
        recon = means.get(a, corpus.prototypes[a])
        errs.append(np.linalg.norm(pose.joints - recon, axis=1).mean())
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# Prior-training scenes


def generate_prior_dataset(n: int, pose_corpus: list[HandPose],
                           image_size: int = 128, object_radius: float = 12.0,
                           seed: int = 0) -> list[PredictionSample]:
    """Disk scenes with both contact points on the object boundary, paired
    with a corpus hand pose. The contact bearing is the direction from the
    image center to the disk center, so it is a deterministic function of the
    image and a trained predictor can localize the points exactly.

    Tokens are left unfilled; run the tokenizer over the result (or the
    written manifest) before training the prior in tokens mode."""
    if n < 0:
        raise InvalidSpec("n must be >= 0")
    if n > 0 and not pose_corpus:
        raise InvalidSpec("pose corpus must be nonempty")
    rng = np.random.default_rng(seed)
    samples = []
    margin = object_radius + 4.0
    for i in range(n):
        cx = rng.uniform(margin, image_size - margin)
        cy = rng.uniform(margin, image_size - margin)
        bearing = float(np.arctan2(cy - image_size / 2, cx - image_size / 2))
        img = np.full((image_size, image_size, 3), 25, dtype=np.uint8)
        disk = _disk_mask(image_size, (cx, cy), object_radius)
        img[disk] = (80, 140, 210)
        thumb = Point2D(cx + object_radius * np.cos(bearing),
                        cy + object_radius * np.sin(bearing))
        index = Point2D(cx + object_radius * np.cos(bearing + 0.6),
                        cy + object_radius * np.sin(bearing + 0.6))
        pose = pose_corpus[int(rng.integers(0, len(pose_corpus)))]
        samples.append(PredictionSample(
            image=img, contact_points=(thumb, index), raw_hand_pose=pose,
        ))
    return samples
