"""Synthetic visual-tactile scenes.

Each data point holds an object mesh (normalized to a unit bounding cube),
one or more grasps with the tactile readings of the touching fingers, depth
images from a ring of cameras, the point cloud lifted from one of them and
the winding number field of the object on a fixed grid.

On disk a data point is a directory:

    mesh.obj                ground-truth surface (indented if deformable)
    wnf.wng                 winding numbers of mesh.obj
    wnf_undeformed.wng      winding numbers before indentation, if any
    view_<k>.depth          depth image of camera k
    points.ply              the input point cloud
    tactile_<i>.pgm         tactile reading i
    poses.json              cameras, sensor spec, hand poses, reading poses
    meta.json               seed, category, scale and contact bookkeeping
"""

import json
import os
import shutil
from collections import Counter
from typing import List, Sequence, Tuple

import numpy as np

import bvh as bvh_module
import geometry
import grasp as grasp_module
import mesh_io
import parallel
import render
import shapes
import tactile
import winding
from geometry import (
    DepthImage, PinholeCamera, PointCloud, RigidTransform, TriangleMesh,
    VoxelGrid)
from hand import NUM_FINGERS, HandModel, HandPose
from log import Log, Progress
from tactile import TactileReading, TactileSensorSpec

SPLITS = ("train", "test", "val")

# Retries with fresh seeds when a grasp makes no contact
MAX_ATTEMPTS = 5

MANIFEST_NAME = "manifest.jsonl"


class SceneSpec:
    def __init__(
            self, kind: str = "sphere", params: dict = None,
            resolution: int = None, path: str = None, category: str = None,
            pose: RigidTransform = None, deformable: bool = False,
            stiffness: float = 1.0, cameras: int = 8,
            camera_radius: float = 2.5, elevation: float = 30.0,
            grasps: int = 2):
        if category is None:
            category = kind if path is None else os.path.splitext(
                os.path.basename(path))[0]
        if path is None:
            kind = shapes.shape_kind(kind).value
        if not 0 < stiffness <= 1:
            raise ValueError("Stiffness must be in (0, 1]: %r" % stiffness)
        if cameras < 1:
            raise ValueError("Need at least one camera, got %d" % cameras)
        if not camera_radius > 0:
            raise ValueError("Camera radius must be positive")
        if not -90 < elevation < 90:
            raise ValueError("Camera elevation must be in (-90, 90) degrees")
        if grasps < 0:
            raise ValueError("Grasp count must be non-negative")

        self.kind = kind  # type: str
        self.params = params  # type: dict
        self.resolution = resolution  # type: int
        # OBJ file to load instead of an analytic shape
        self.path = path  # type: str
        self.category = category  # type: str
        self.pose = pose or RigidTransform.identity()  # type: RigidTransform
        self.deformable = deformable  # type: bool
        self.stiffness = float(stiffness)  # type: float
        self.cameras = cameras  # type: int
        self.camera_radius = float(camera_radius)  # type: float
        self.elevation = float(elevation)  # type: float
        self.grasps = grasps  # type: int

    def __repr__(self):
        return "SceneSpec(%s%s)" % (
            self.category,
            ", stiffness %g" % self.stiffness if self.deformable else "")

    def load_mesh(self) -> TriangleMesh:
        if self.path is not None:
            return mesh_io.read_obj(self.path)
        return shapes.make_analytic_mesh(
            self.kind, self.params, self.resolution)


class DatagenSettings:
    """Scene-independent generation constants."""

    def __init__(
            self, sensor: TactileSensorSpec = None, hand: HandModel = None,
            grid: VoxelGrid = None, num_points: int = 3000,
            image_size: int = 128, focal: float = 160.0,
            gt_mode: winding.Mode = winding.Mode.EXACT, threads: int = 1):
        self.sensor = sensor or TactileSensorSpec()  # type: TactileSensorSpec
        self.hand = hand or HandModel()  # type: HandModel
        self.grid = grid or VoxelGrid.cube(
            (-0.6, -0.6, -0.6), 1.2, 32)  # type: VoxelGrid
        self.num_points = num_points  # type: int
        self.image_size = image_size  # type: int
        self.focal = focal  # type: float
        self.gt_mode = gt_mode  # type: winding.Mode
        self.threads = threads  # type: int


class DataPoint:
    def __init__(
            self, cloud: PointCloud, readings: List[TactileReading],
            hand_poses: List[HandPose], wnf: winding.WnfGrid,
            mesh: TriangleMesh, cameras: List[PinholeCamera],
            depths: List[DepthImage], view_index: int, meta: dict,
            wnf_undeformed: winding.WnfGrid = None):
        per_grasp = Counter(r.grasp_index for r in readings)
        if per_grasp and max(per_grasp.values()) > NUM_FINGERS:
            grasp, count = per_grasp.most_common(1)[0]
            raise ValueError(
                "Grasp %d has %d readings, at most %d allowed" % (
                    grasp, count, NUM_FINGERS))

        self.cloud = cloud  # type: PointCloud
        self.readings = readings  # type: List[TactileReading]
        self.hand_poses = hand_poses  # type: List[HandPose]
        self.wnf = wnf  # type: winding.WnfGrid
        self.wnf_undeformed = wnf_undeformed  # type: winding.WnfGrid
        self.mesh = mesh  # type: TriangleMesh
        self.cameras = cameras  # type: List[PinholeCamera]
        self.depths = depths  # type: List[DepthImage]
        self.view_index = view_index  # type: int
        self.meta = meta  # type: dict

    def __repr__(self):
        return "DataPoint(%s, seed %d, %d points, %d readings)" % (
            self.meta.get("category"), self.meta.get("seed", -1),
            len(self.cloud), len(self.readings))

    def target(self, channel: str = "deformed") -> winding.WnfGrid:
        if channel == "deformed":
            return self.wnf
        if channel == "undeformed":
            if self.wnf_undeformed is not None:
                return self.wnf_undeformed
            return self.wnf
        raise ValueError("Unknown target channel %r" % channel)

    def readings_upto(self, grasps: int) -> List[TactileReading]:
        """Readings from the first `grasps` grasps."""
        return [r for r in self.readings if r.grasp_index < grasps]


def normalize_mesh(mesh: TriangleMesh) -> Tuple[TriangleMesh, float]:
    """Center the bounding box on the origin and scale it to unit size."""
    lo, hi = mesh.bounds()
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise ValueError("Mesh has zero extent")
    scale = 1.0 / extent
    centered = mesh.with_vertices((mesh.vertices - 0.5 * (lo + hi)) * scale)
    return centered, scale


def ring_cameras(
        count: int, radius: float, elevation: float, size: int,
        focal: float) -> List[PinholeCamera]:
    """Cameras evenly spaced in azimuth, all looking at the origin."""
    cameras = []
    e = np.radians(elevation)
    for k in range(count):
        a = 2 * np.pi * k / count
        eye = radius * np.array([
            np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)])
        cameras.append(PinholeCamera.look_at(
            eye, (0, 0, 0), (0, 0, 1), focal, focal, size, size))
    return cameras


def indent_mesh(
        mesh: TriangleMesh, points, normals, stiffness: float,
        depth: float, radius: float) -> TriangleMesh:
    """Push vertices near each contact inwards along the contact normal.

    Displacement is depth * (1 - stiffness) * exp(-d^2 / 2 sigma^2) with
    sigma = radius / 2, for vertices within radius of the contact point.
    """
    if not 0 < stiffness <= 1:
        raise ValueError("Stiffness must be in (0, 1]: %r" % stiffness)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if stiffness == 1 or len(points) == 0:
        return mesh

    sigma = radius / 2
    amount = depth * (1.0 - stiffness)
    vertices = np.array(mesh.vertices)
    for p, n in zip(points, normals):
        d2 = np.sum((mesh.vertices - p) ** 2, axis=1)
        weight = np.where(
            d2 <= radius * radius, np.exp(-d2 / (2 * sigma * sigma)), 0.0)
        vertices -= (amount * weight)[:, None] * n
    return mesh.with_vertices(vertices)


def _seeds(seed: int, count: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(2 ** 31, size=count)


def generate_datapoint(
        spec: SceneSpec, seed: int,
        settings: DatagenSettings = None) -> DataPoint:
    """Run the full scene pipeline; deterministic per seed."""
    if settings is None:
        settings = DatagenSettings()
    sensor = settings.sensor
    grasp_seeds, view_seed, cloud_seed = np.split(
        _seeds(seed, spec.grasps + 2), [spec.grasps, spec.grasps + 1])

    original, scale = normalize_mesh(spec.load_mesh().transformed(spec.pose))
    tree = bvh_module.build_bvh(original)

    grasps = [
        grasp_module.place_grasp(
            original, settings.hand, int(s), sensor, tree)
        for s in grasp_seeds]

    mesh = original
    if spec.deformable and spec.stiffness < 1 and grasps:
        points, normals = zip(*[g.contact_targets() for g in grasps])
        mesh = indent_mesh(
            original, np.concatenate(points), np.concatenate(normals),
            spec.stiffness, grasp_module.PRESS_FRACTION *
            sensor.max_indentation, 2 * sensor.gel_width)
        tree = bvh_module.build_bvh(mesh)

    cameras = ring_cameras(
        spec.cameras, spec.camera_radius, spec.elevation,
        settings.image_size, settings.focal)
    depths = [
        render.render_depth(camera, mesh, tree, settings.threads)
        for camera in cameras]
    view_index = int(view_seed[0] % spec.cameras)
    cloud = geometry.backproject_depth(
        cameras[view_index], depths[view_index]).subsample(
            settings.num_points, int(cloud_seed[0]))

    readings = []
    for g, grasp in enumerate(grasps):
        for reading in grasp.readings:
            again = tactile.render_tactile(
                mesh, reading.pose, sensor, tree, reading.sensor_index, g)
            if again.num_contacts():
                readings.append(again)

    wnf = winding.evaluate_wnf_grid(
        mesh, settings.grid, settings.gt_mode, tree, settings.threads)
    wnf_undeformed = None
    if mesh is not original:
        wnf_undeformed = winding.evaluate_wnf_grid(
            original, settings.grid, settings.gt_mode, None,
            settings.threads)

    meta = {
        "seed": int(seed),
        "category": spec.category,
        "view_index": view_index,
        "scale": scale,
        "deformable": bool(spec.deformable),
        "stiffness": spec.stiffness,
        "contacts": [g.contacts() for g in grasps],
    }
    return DataPoint(
        cloud, readings, [g.pose for g in grasps], wnf, mesh, cameras,
        depths, view_index, meta, wnf_undeformed)


def _pose_list(pose: RigidTransform) -> list:
    return pose.matrix()[:3].tolist()


def write_datapoint(path: str, dp: DataPoint, hand: HandModel) -> None:
    os.makedirs(path, exist_ok=True)
    mesh_io.write_obj(os.path.join(path, "mesh.obj"), dp.mesh)
    mesh_io.write_wng(os.path.join(path, "wnf.wng"), dp.wnf)
    if dp.wnf_undeformed is not None:
        mesh_io.write_wng(
            os.path.join(path, "wnf_undeformed.wng"), dp.wnf_undeformed)
    for k, (camera, depth) in enumerate(zip(dp.cameras, dp.depths)):
        mesh_io.write_depth(
            os.path.join(path, "view_%d.depth" % k), camera, depth)
    mesh_io.write_ply(os.path.join(path, "points.ply"), dp.cloud)

    tactile_entries = []
    for i, reading in enumerate(dp.readings):
        name = "tactile_%d.pgm" % i
        mesh_io.write_pgm16(os.path.join(path, name), reading.image)
        tactile_entries.append({
            "file": name,
            "sensor_index": reading.sensor_index,
            "grasp_index": reading.grasp_index,
            "pose": _pose_list(reading.pose),
        })

    sensor = dp.readings[0].spec if dp.readings else TactileSensorSpec()
    poses = {
        "cameras": [camera.to_dict() for camera in dp.cameras],
        "sensor": sensor.to_dict(),
        "hand_model": hand.to_dict(),
        "hand": [pose.to_vector().tolist() for pose in dp.hand_poses],
        "tactile": tactile_entries,
        "view_index": dp.view_index,
    }
    with open(os.path.join(path, "poses.json"), "w") as f:
        json.dump(poses, f, indent=1, sort_keys=True)
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(dp.meta, f, indent=1, sort_keys=True)


def _read_wnf(path: str) -> winding.WnfGrid:
    spec, data = mesh_io.read_wng(path)
    return winding.WnfGrid(spec.origin, spec.spacing, spec.dims, data)


def load_datapoint(path: str) -> DataPoint:
    with open(os.path.join(path, "poses.json")) as f:
        poses = json.load(f)
    with open(os.path.join(path, "meta.json")) as f:
        meta = json.load(f)

    sensor = TactileSensorSpec.from_dict(poses["sensor"])
    readings = []
    for entry in poses["tactile"]:
        image = mesh_io.read_pgm16(os.path.join(path, entry["file"]))
        readings.append(TactileReading(
            image, RigidTransform.from_matrix(entry["pose"]), sensor,
            entry["sensor_index"], entry["grasp_index"]))

    cameras = []
    depths = []
    for k in range(len(poses["cameras"])):
        camera, depth = mesh_io.read_depth(
            os.path.join(path, "view_%d.depth" % k))
        cameras.append(camera)
        depths.append(depth)

    undeformed_path = os.path.join(path, "wnf_undeformed.wng")
    wnf_undeformed = _read_wnf(undeformed_path) if os.path.exists(
        undeformed_path) else None
    return DataPoint(
        mesh_io.read_ply(os.path.join(path, "points.ply")),
        readings, [HandPose.from_vector(v) for v in poses["hand"]],
        _read_wnf(os.path.join(path, "wnf.wng")),
        mesh_io.read_obj(os.path.join(path, "mesh.obj")),
        cameras, depths, poses["view_index"], meta, wnf_undeformed)


def load_hand_model(path: str) -> HandModel:
    with open(os.path.join(path, "poses.json")) as f:
        return HandModel.from_dict(json.load(f)["hand_model"])


def read_manifest(path: str) -> List[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def scene_path(manifest_path: str, row: dict) -> str:
    return os.path.join(os.path.dirname(manifest_path), row["path"])


def _split_of(index: int, counts: Sequence[int]) -> str:
    for split, limit in zip(SPLITS, np.cumsum(counts)):
        if index < limit:
            return split
    raise ValueError("Scene index %d beyond split counts" % index)


def generate_dataset(
        specs: Sequence[SceneSpec], counts: Sequence[int], out_dir: str,
        settings: DatagenSettings = None, seed: int = 0,
        threads: int = 1) -> str:
    """Generate train/test/val scenes and write their manifest.

    Scene i uses specs[i % len(specs)] and seed
    seed + attempt * total + i, so no seed is shared between scenes.
    On failure every scene directory created here is removed again.
    """
    if not specs:
        raise ValueError("Need at least one scene spec")
    if len(counts) != len(SPLITS) or min(counts) < 0:
        raise ValueError(
            "Need non-negative (train, test, val) counts, got %s" % (
                tuple(counts),))
    total = int(sum(counts))
    if total == 0:
        raise ValueError("Dataset would be empty")
    if settings is None:
        settings = DatagenSettings()

    os.makedirs(out_dir, exist_ok=True)
    names = ["scene_%05d" % i for i in range(total)]
    existing = {n for n in names if os.path.exists(os.path.join(out_dir, n))}
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    progress = Progress(total)

    def _generate(i: int) -> dict:
        spec = specs[i % len(specs)]
        last = None
        for attempt in range(MAX_ATTEMPTS):
            scene_seed = seed + attempt * total + i
            try:
                dp = generate_datapoint(spec, scene_seed, settings)
            except grasp_module.NoTouchError as e:
                Log("Datagen", "%s, retrying" % e)
                last = e
                continue
            write_datapoint(os.path.join(out_dir, names[i]), dp, settings.hand)
            progress.advance()
            return {
                "scene": names[i],
                "path": names[i],
                "seed": scene_seed,
                "category": spec.category,
                "split": _split_of(i, counts),
                "deformable": bool(spec.deformable),
            }
        raise last

    try:
        rows = parallel.map_ordered(_generate, range(total), threads)
        with open(manifest_path, "w") as f:
            for row in rows:
                f.write(json.dumps(row, sort_keys=True) + "\n")
    except BaseException:
        for name in names:
            path = os.path.join(out_dir, name)
            if name not in existing and os.path.exists(path):
                shutil.rmtree(path)
        if os.path.exists(manifest_path):
            os.remove(manifest_path)
        raise
    progress.done()
    Log("Datagen", "wrote %d scenes to %s" % (total, out_dir))
    return manifest_path
