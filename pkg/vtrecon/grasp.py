"""Heuristic grasp synthesis.

A grasp is found by placing the wrist so that the palm faces the object,
choosing up to five contact targets on the surface (an antipodal pair plus
farthest-point samples), assigning one finger to each target and bending
that finger with inverse kinematics until its gel presses into the surface.
"""

from typing import List

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.transform import Rotation

import bvh as bvh_module
import geometry
import hand
import tactile
from geometry import RigidTransform, TriangleMesh
from hand import HandModel, HandPose
from log import Log
from tactile import TactileReading, TactileSensorSpec

# A finger touches when its gel lands this close to the press target.
CONTACT_TOLERANCE = 0.002

# Press depth as a fraction of the sensor's maximum indentation
PRESS_FRACTION = 0.5

NUM_CANDIDATES = 512
MAX_TARGETS = 5
IK_ITERATIONS = 200
IK_DAMPING = 0.05
IK_RESTARTS = 3


class NoTouchError(Exception):
    """Raised when no finger of a grasp makes contact with the object."""

    def __init__(self, seed: int):
        self.seed = seed

    def __str__(self):
        return "Grasp with seed %d made no successful touch" % self.seed


class Grasp:
    def __init__(
            self, pose: HandPose, targets: np.ndarray, normals: np.ndarray,
            fingers: np.ndarray, errors: np.ndarray,
            readings: List[TactileReading], seed: int):
        self.pose = pose  # type: HandPose
        # Surface points and outward normals, one per assigned finger
        self.targets = targets  # type: np.ndarray
        self.normals = normals  # type: np.ndarray
        self.fingers = fingers  # type: np.ndarray
        self.errors = errors  # type: np.ndarray
        # Tactile readings of the fingers in contact, by finger index
        self.readings = readings  # type: List[TactileReading]
        self.seed = seed  # type: int

    def __repr__(self):
        return "Grasp(seed %d, contacts %s)" % (self.seed, self.contacts())

    def contacts(self) -> List[int]:
        return [r.sensor_index for r in self.readings]

    def contact_targets(self):
        """(points, normals) of the targets touched by contacting fingers."""
        touching = np.isin(self.fingers, self.contacts())
        return self.targets[touching], self.normals[touching]


def place_wrist(
        mesh: TriangleMesh, model: HandModel,
        rng: np.random.Generator) -> RigidTransform:
    """Random wrist orientation with the palm resting on the object's
    bounding sphere and the fingers centered on it."""
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    radius = np.linalg.norm(mesh.vertices - center, axis=1).max()

    grasp_center = np.array([
        model.base_offsets[:, 0].mean(),
        model.base_offsets[:, 1].mean() +
        0.5 * model.segment_lengths.sum(axis=1).mean(),
        radius])
    rotation = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(rotation, center - rotation @ grasp_center)


def choose_targets(
        mesh: TriangleMesh, wrist: RigidTransform, model: HandModel,
        seed: int, count: int = MAX_TARGETS):
    """Antipodal pair starting next to the thumb, then farthest-point
    samples."""
    points, faces = geometry.sample_surface_with_faces(
        mesh, NUM_CANDIDATES, seed)
    normals = mesh.face_normals()[faces]

    thumb = wrist.apply(model.rest_tips()[0])
    a = int(np.argmin(np.linalg.norm(points - thumb, axis=1)))
    offset = points - points[a]
    length = np.linalg.norm(offset, axis=1)
    length[length == 0] = 1.0
    score = normals @ normals[a] + (offset / length[:, None]) @ normals[a]
    score[a] = np.inf
    chosen = [a, int(np.argmin(score))]

    distance = np.minimum(
        np.linalg.norm(points - points[chosen[0]], axis=1),
        np.linalg.norm(points - points[chosen[1]], axis=1))
    while len(chosen) < min(count, len(points)):
        nxt = int(np.argmax(distance))
        chosen.append(nxt)
        distance = np.minimum(
            distance, np.linalg.norm(points - points[nxt], axis=1))
    return points[chosen], normals[chosen]


def place_grasp(
        mesh: TriangleMesh, model: HandModel, seed: int,
        spec: TactileSensorSpec = None,
        tree: bvh_module.Bvh = None) -> Grasp:
    """Synthesize a grasp and render the tactile readings of its contacts.

    Raises NoTouchError when no finger ends within CONTACT_TOLERANCE of its
    press target with at least one contact pixel.
    """
    if mesh.is_empty():
        raise ValueError("Cannot grasp an empty mesh")
    if spec is None:
        spec = TactileSensorSpec()
    if geometry.mesh_area(mesh) == 0:
        raise NoTouchError(seed)
    if tree is None:
        tree = bvh_module.build_bvh(mesh)

    rng = np.random.default_rng(seed)
    wrist = place_wrist(mesh, model, rng)
    targets, normals = choose_targets(mesh, wrist, model, seed)

    press = PRESS_FRACTION * spec.max_indentation
    gel = np.array([0.0, 0.0, spec.rest_depth])
    rest_pose = HandPose(wrist)
    rest_gels = np.array([
        hand.sensor_pose(model, rest_pose, f).apply(gel)
        for f in range(hand.NUM_FINGERS)])
    cost = np.linalg.norm(
        rest_gels[:, None, :] - targets[None, :, :], axis=2)
    fingers, order = linear_sum_assignment(cost)
    targets = targets[order]
    normals = normals[order]

    pose = rest_pose
    errors = np.empty(len(fingers))
    for i, finger in enumerate(fingers):
        goal = targets[i] - normals[i] * press
        best = None
        for attempt in range(IK_RESTARTS):
            start = pose
            if attempt:
                angles = np.array(pose.joint_angles)
                angles[finger] = rng.uniform(
                    -model.joint_limit / 2, model.joint_limit / 2,
                    size=(hand.NUM_SEGMENTS, 3))
                start = pose.with_angles(angles)
            solved, error = hand.inverse_kinematics(
                model, start, finger, goal, direction=-normals[i], point=gel,
                iterations=IK_ITERATIONS, damping=IK_DAMPING,
                tolerance=0.1 * CONTACT_TOLERANCE)
            if best is None or error < best[1]:
                best = (solved, error)
            if error <= 0.1 * CONTACT_TOLERANCE:
                break
        pose, errors[i] = best

    readings = []
    for i in np.argsort(fingers):
        finger = int(fingers[i])
        if errors[i] > CONTACT_TOLERANCE:
            continue
        reading = tactile.render_tactile(
            mesh, hand.sensor_pose(model, pose, finger), spec, tree,
            sensor_index=finger)
        if reading.num_contacts():
            readings.append(reading)

    if not readings:
        raise NoTouchError(seed)
    Log("Grasp", "seed %d: fingers %s in contact" % (
        seed, [r.sensor_index for r in readings]))
    return Grasp(pose, targets, normals, fingers, errors, readings, seed)
