"""Mesh reconstruction from a point cloud and any number of tactile readings.

Every voxel center of the reconstruction grid is decoded with the visual
feature at that position.  Centers within the query radius of a contact
patch also get the tactile feature of the nearest patch.  The mesh is the
0.5 level set of the decoded field.

Sensor poses come either straight from the readings (direct mode) or from
the hand pose of each grasp through forward kinematics (hand mode).
"""

import enum
from typing import List, Sequence, Tuple

import numpy as np

import hand
import marching
import network
import parallel
import queries
import tactile
import winding
from geometry import PointCloud, TriangleMesh, VoxelGrid
from hand import HandModel, HandPose
from log import Log
from network import ReconModel, SceneInput
from tactile import ContactPatch, DepthCalibration, TactileReading

DEFAULT_CHUNK_SIZE = 8192


class SensorPoseMode(enum.Enum):
    DIRECT = "direct"
    HAND = "hand"


def hand_mode_readings(
        readings: Sequence[TactileReading], model: HandModel,
        hand_poses: Sequence[HandPose], pose_noise: float = 0.0,
        seed: int = 0) -> List[TactileReading]:
    """Readings re-posed at the sensor poses implied by the hand poses.

    With pose_noise each grasp's hand pose is perturbed first, once per
    grasp, so all readings of a grasp share the same error.
    """
    poses = [hand.perturb_pose(model, pose, pose_noise, seed + i)
             for i, pose in enumerate(hand_poses)]
    out = []
    for reading in readings:
        if reading.grasp_index >= len(poses):
            raise ValueError("No hand pose for grasp %d" % (
                reading.grasp_index))
        out.append(reading.with_pose(hand.sensor_pose(
            model, poses[reading.grasp_index], reading.sensor_index)))
    return out


def scene_input(
        cloud: PointCloud, readings: Sequence[TactileReading],
        calibration: DepthCalibration = None
) -> Tuple[SceneInput, List[ContactPatch]]:
    """Network input and contact patches, one patch per reading."""
    patches = [tactile.contact_patch(r, calibration) for r in readings]
    if not readings:
        return SceneInput(cloud), patches
    inputs = np.stack([network.tactile_input(r, calibration)
                       for r in readings])
    return SceneInput(cloud, inputs), patches


def predict_wnf_grid(
        model: ReconModel, cloud: PointCloud,
        readings: Sequence[TactileReading], grid_spec: VoxelGrid = None,
        calibration: DepthCalibration = None,
        radius: float = hand.DEFAULT_QUERY_RADIUS,
        threads: int = 1) -> winding.WnfGrid:
    """Decoded winding number field at every voxel center of grid_spec."""
    if grid_spec is None:
        grid_spec = model.arch.feature_grid
    scene, patches = scene_input(cloud, readings, calibration)
    centers = grid_spec.centers()
    index = queries.nearest_patch(patches, centers, radius)
    vis = model.encode(cloud)

    items = np.concatenate([centers, index[:, None]], axis=1)

    def _decode(chunk):
        return model.predict(
            scene, chunk[:, :3], chunk[:, 3].astype(np.int64),
            chunk_size=len(chunk) or 1, vis=vis)

    values = parallel.chunked(
        _decode, items, threads, chunk_size=DEFAULT_CHUNK_SIZE)
    return winding.WnfGrid.from_flat_values(grid_spec, values)


def check_trained(model: ReconModel) -> None:
    if not model.is_finite():
        raise ValueError("Model has non-finite parameters")
    if model.steps == 0:
        raise ValueError("Model has not been trained")


def reconstruct(
        model: ReconModel, cloud: PointCloud,
        readings: Sequence[TactileReading] = (),
        grid_spec: VoxelGrid = None,
        mode: SensorPoseMode = SensorPoseMode.DIRECT,
        hand_model: HandModel = None,
        hand_poses: Sequence[HandPose] = (), pose_noise: float = 0.0,
        seed: int = 0, calibration: DepthCalibration = None,
        radius: float = hand.DEFAULT_QUERY_RADIUS,
        threads: int = 1) -> TriangleMesh:
    """Reconstruct a mesh; more readings refine it without retraining."""
    check_trained(model)
    mode = SensorPoseMode(mode)
    readings = list(readings)
    if mode == SensorPoseMode.HAND and readings:
        if hand_model is None:
            raise ValueError("Hand mode needs a hand model")
        readings = hand_mode_readings(
            readings, hand_model, hand_poses, pose_noise, seed)

    wnf = predict_wnf_grid(
        model, cloud, readings, grid_spec, calibration, radius, threads)
    mesh = marching.marching_cubes(wnf)
    Log("Recon", "%d readings (%s): %d vertices, %d faces" % (
        len(readings), mode.value, mesh.num_vertices, mesh.num_faces))
    return mesh
