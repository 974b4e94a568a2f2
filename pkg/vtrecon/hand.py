"""Stick-figure articulated hand with fingertip-mounted tactile sensors.

Five fingers (thumb, index, middle, ring, pinky) of three segments each hang
off the wrist frame.  At zero pose every finger extends along +y from its
base offset and the palm side faces +z; a positive rotation about a joint's
x axis curls the finger towards the palm.

A hand pose is 51 scalars, in this order:

    wrist translation (3), wrist rotation as axis-angle (3),
    then for thumb .. pinky, proximal .. distal joint: axis-angle xyz (45)
"""

from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from geometry import PointCloud, RigidTransform

FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")
NUM_FINGERS = 5
NUM_SEGMENTS = 3
POSE_SIZE = 6 + NUM_FINGERS * NUM_SEGMENTS * 3

DEFAULT_JOINT_LIMIT = np.pi / 2

# Scene units; objects are normalized to a unit bounding cube.
DEFAULT_BASE_OFFSETS = (
    (0.45, 0.12, 0.0),
    (0.22, 0.62, 0.0),
    (0.0, 0.68, 0.0),
    (-0.22, 0.62, 0.0),
    (-0.42, 0.52, 0.0),
)

DEFAULT_SEGMENT_LENGTHS = (
    (0.40, 0.32, 0.28),
    (0.50, 0.32, 0.25),
    (0.52, 0.35, 0.28),
    (0.50, 0.32, 0.25),
    (0.40, 0.28, 0.22),
)

# Sensor camera sits behind the pad, looking out of the palm side.
DEFAULT_TIP_TO_SENSOR = (0.0, -0.03, -0.09)

DEFAULT_QUERY_RADIUS = 0.1


class JointLimitError(Exception):
    """Raised when a pose has joint angles outside the hand's limits."""

    def __init__(self, joints: List[Tuple[str, int, int, float]]):
        # (finger name, segment, axis, angle)
        self.joints = joints

    def __str__(self):
        return "Joint angles out of limits: %s" % ", ".join(
            "%s[%d].%s=%.4f" % (finger, segment, "xyz"[axis], angle)
            for finger, segment, axis, angle in self.joints)


class HandModel:
    def __init__(
            self, base_offsets=DEFAULT_BASE_OFFSETS,
            segment_lengths=DEFAULT_SEGMENT_LENGTHS,
            tip_to_sensor=None,
            joint_limit: float = DEFAULT_JOINT_LIMIT):
        base_offsets = np.array(base_offsets, dtype=np.float64)
        segment_lengths = np.array(segment_lengths, dtype=np.float64)
        if base_offsets.shape != (NUM_FINGERS, 3):
            raise ValueError(
                "Need %d base offsets, got shape %s" % (
                    NUM_FINGERS, base_offsets.shape))
        if segment_lengths.shape != (NUM_FINGERS, NUM_SEGMENTS):
            raise ValueError(
                "Need %dx%d segment lengths, got shape %s" % (
                    NUM_FINGERS, NUM_SEGMENTS, segment_lengths.shape))
        if not np.all(segment_lengths > 0):
            raise ValueError("Segment lengths must be positive")
        if not 0 < joint_limit <= np.pi:
            raise ValueError("Bad joint limit %r" % joint_limit)

        if tip_to_sensor is None:
            tip_to_sensor = [
                RigidTransform.from_translation(DEFAULT_TIP_TO_SENSOR)
            ] * NUM_FINGERS
        elif isinstance(tip_to_sensor, RigidTransform):
            tip_to_sensor = [tip_to_sensor] * NUM_FINGERS
        if len(tip_to_sensor) != NUM_FINGERS:
            raise ValueError("Need one tip-to-sensor transform per finger")

        base_offsets.flags.writeable = False
        segment_lengths.flags.writeable = False
        self.base_offsets = base_offsets  # type: np.ndarray
        self.segment_lengths = segment_lengths  # type: np.ndarray
        self.tip_to_sensor = tuple(
            tip_to_sensor)  # type: Tuple[RigidTransform, ...]
        self.joint_limit = float(joint_limit)  # type: float

    def __repr__(self):
        return "HandModel(finger lengths %s)" % np.array2string(
            self.segment_lengths.sum(axis=1), precision=3)

    def rest_tips(self) -> np.ndarray:
        """Tip positions in the wrist frame at zero pose."""
        tips = self.base_offsets.copy()
        tips[:, 1] += self.segment_lengths.sum(axis=1)
        return tips

    def to_dict(self) -> dict:
        return {
            "base_offsets": self.base_offsets.tolist(),
            "segment_lengths": self.segment_lengths.tolist(),
            "tip_to_sensor": [
                t.matrix()[:3].tolist() for t in self.tip_to_sensor],
            "joint_limit": self.joint_limit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HandModel":
        return cls(
            d["base_offsets"], d["segment_lengths"],
            [RigidTransform.from_matrix(m) for m in d["tip_to_sensor"]],
            d["joint_limit"])


class HandPose:
    def __init__(self, wrist: RigidTransform = None, joint_angles=None):
        if wrist is None:
            wrist = RigidTransform.identity()
        angles = np.zeros((NUM_FINGERS, NUM_SEGMENTS, 3)) if (
            joint_angles is None) else np.array(
                joint_angles, dtype=np.float64).reshape(
                    NUM_FINGERS, NUM_SEGMENTS, 3)
        if not np.all(np.isfinite(angles)):
            raise ValueError("Non-finite joint angles")
        angles.flags.writeable = False
        self.wrist = wrist  # type: RigidTransform
        self.joint_angles = angles  # type: np.ndarray

    def __repr__(self):
        return "HandPose(wrist=%r, max |angle|=%.3f)" % (
            self.wrist, np.abs(self.joint_angles).max())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.wrist.translation, self.wrist.rotvec(),
            self.joint_angles.ravel()])

    @classmethod
    def from_vector(cls, theta) -> "HandPose":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (POSE_SIZE,):
            raise ValueError(
                "Hand pose vector must have %d values, got %s" % (
                    POSE_SIZE, theta.shape))
        wrist = RigidTransform.from_rotvec(theta[3:6], theta[0:3])
        return cls(wrist, theta[6:])

    def with_angles(self, joint_angles) -> "HandPose":
        return HandPose(self.wrist, joint_angles)

    def with_wrist(self, wrist: RigidTransform) -> "HandPose":
        return HandPose(wrist, self.joint_angles)


def check_limits(model: HandModel, pose: HandPose) -> None:
    bad = np.argwhere(np.abs(pose.joint_angles) > model.joint_limit + 1e-12)
    if len(bad):
        raise JointLimitError([
            (FINGER_NAMES[f], int(s), int(a),
             float(pose.joint_angles[f, s, a])) for f, s, a in bad])


def clamp_to_limits(model: HandModel, pose: HandPose) -> HandPose:
    return pose.with_angles(np.clip(
        pose.joint_angles, -model.joint_limit, model.joint_limit))


def finger_frames(
        model: HandModel, pose: HandPose, finger: int
) -> List[RigidTransform]:
    """World frames at the base of each segment, followed by the tip."""
    frame = pose.wrist @ RigidTransform.from_translation(
        model.base_offsets[finger])
    frames = []
    for segment in range(NUM_SEGMENTS):
        frames.append(frame)
        frame = (
            frame @ RigidTransform.from_rotvec(
                pose.joint_angles[finger, segment]) @
            RigidTransform.from_translation(
                (0.0, model.segment_lengths[finger, segment], 0.0)))
    frames.append(frame)
    return frames


def tip_frame(model: HandModel, pose: HandPose, finger: int) -> RigidTransform:
    return finger_frames(model, pose, finger)[-1]


def forward_kinematics(model: HandModel, pose: HandPose) -> np.ndarray:
    """(5, 3) world-frame fingertip positions."""
    check_limits(model, pose)
    return np.array([
        tip_frame(model, pose, f).translation for f in range(NUM_FINGERS)])


def sensor_pose(
        model: HandModel, pose: HandPose, finger: int) -> RigidTransform:
    return tip_frame(model, pose, finger) @ model.tip_to_sensor[finger]


def sensor_poses(model: HandModel, pose: HandPose) -> List[RigidTransform]:
    """Camera-to-world pose of the tactile sensor on each finger."""
    check_limits(model, pose)
    return [sensor_pose(model, pose, f) for f in range(NUM_FINGERS)]


def hand_loss(pred: HandPose, gt: HandPose) -> float:
    """Squared L2 distance between the 51-value pose vectors."""
    return float(np.sum((pred.to_vector() - gt.to_vector()) ** 2))


def perturb_pose(
        model: HandModel, pose: HandPose, sigma: float,
        seed: int) -> HandPose:
    """Gaussian noise on every pose scalar, joints kept within limits."""
    if sigma < 0:
        raise ValueError("Pose noise must be non-negative: %r" % sigma)
    if sigma == 0:
        return pose
    rng = np.random.default_rng(seed)
    theta = pose.to_vector() + rng.normal(scale=sigma, size=POSE_SIZE)
    return clamp_to_limits(model, HandPose.from_vector(theta))


def sphere_query_positions(
        patches: Sequence, radius: float = DEFAULT_QUERY_RADIUS,
        n: int = 0, seed: int = 0) -> PointCloud:
    """Uniform samples from the union of radius balls around patch points.

    A ball is picked uniformly, a point drawn uniformly inside it and kept
    with probability 1 / (number of balls containing it), which makes the
    accepted points uniform over the union.
    """
    if not radius > 0:
        raise ValueError("Query radius must be positive: %r" % radius)
    if n < 0:
        raise ValueError("Sample count must be non-negative: %d" % n)
    centers = PointCloud.concatenate([p.points for p in patches]).points
    if len(centers) == 0 or n == 0:
        return PointCloud()

    tree = cKDTree(centers)
    rng = np.random.default_rng(seed)
    accepted = []
    remaining = n
    while remaining > 0:
        batch = max(2 * remaining, 64)
        ball = rng.integers(len(centers), size=batch)
        direction = rng.normal(size=(batch, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        r = radius * np.cbrt(rng.random(batch))
        points = centers[ball] + direction * r[:, None]
        coverage = tree.query_ball_point(
            points, radius, return_length=True)
        keep = rng.random(batch) * np.maximum(coverage, 1) < 1.0
        points = points[keep][:remaining]
        accepted.append(points)
        remaining -= len(points)
    return PointCloud(np.concatenate(accepted))


def _sensor_chain(
        model: HandModel, wrist: RigidTransform, finger: int,
        theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sensor rotation and translation for one finger's 9 joint values.

    Same composition as sensor_pose without building RigidTransforms.
    """
    joints = Rotation.from_rotvec(
        np.array(np.reshape(theta, (NUM_SEGMENTS, 3)))).as_matrix()
    rotation = wrist.rotation
    translation = wrist.apply(model.base_offsets[finger])
    for segment in range(NUM_SEGMENTS):
        rotation = rotation @ joints[segment]
        translation = translation + rotation[:, 1] * model.segment_lengths[
            finger, segment]
    offset = model.tip_to_sensor[finger]
    return (rotation @ offset.rotation,
            rotation @ offset.translation + translation)


def inverse_kinematics(
        model: HandModel, pose: HandPose, finger: int, target,
        direction=None, point=(0.0, 0.0, 0.0), iterations: int = 200,
        damping: float = 0.05, tolerance: float = 1e-4,
        orientation_weight: float = 0.2) -> Tuple[HandPose, float]:
    """Damped least squares on one finger's joint angles.

    Moves `point`, given in the finger's sensor frame, onto `target`.  If
    `direction` is given the sensor z axis is also pulled towards it during
    the first half of the iterations; the second half refines position
    only.  Returns the new pose and the final position error.
    """
    target = np.asarray(target, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64)
    if direction is not None:
        direction = np.asarray(direction, dtype=np.float64)
    h = 1e-6

    def residual(theta, with_direction):
        rotation, translation = _sensor_chain(
            model, pose.wrist, finger, theta)
        r = rotation @ point + translation - target
        if with_direction:
            r = np.concatenate([
                r, orientation_weight * (rotation[:, 2] - direction)])
        return r

    limit = model.joint_limit
    theta = np.clip(pose.joint_angles[finger].ravel(), -limit, limit)
    for it in range(iterations):
        with_direction = direction is not None and it < iterations // 2
        r = residual(theta, with_direction)
        if not with_direction and np.linalg.norm(r) <= tolerance:
            break
        jac = np.empty((len(r), len(theta)))
        for j in range(len(theta)):
            step = np.zeros_like(theta)
            step[j] = h
            jac[:, j] = (residual(theta + step, with_direction) -
                         residual(theta - step, with_direction)) / (2 * h)
        delta = jac.T @ np.linalg.solve(
            jac @ jac.T + damping ** 2 * np.eye(len(r)), r)
        theta = np.clip(theta - delta, -limit, limit)

    angles = np.array(pose.joint_angles)
    angles[finger] = theta.reshape(NUM_SEGMENTS, 3)
    solved = pose.with_angles(angles)
    error = float(np.linalg.norm(
        sensor_pose(model, solved, finger).apply(point) - target))
    return solved, error
