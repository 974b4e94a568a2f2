"""Fingertip tactile sensor model.

The sensor is a pinhole camera looking along +z at an elastic gel whose
undeformed surface lies at z = rest_depth in the sensor frame.  Anything
pressed into the gel pushes its surface towards the camera; the tactile
image records the indentation, normalized by the maximum indentation, so
intensity and depth are related by

    depth = rest_depth - intensity * max_indentation

which is what tactile_depth inverts and train_depth_net fits from data.
"""

from typing import List, Sequence, Tuple

import numpy as np
from sklearn.linear_model import QuantileRegressor

import bvh as bvh_module
import geometry
import render
from geometry import (
    DepthImage, PinholeCamera, PointCloud, RigidTransform, TriangleMesh)

# Intensities at or below this are not treated as contact
DEFAULT_CONTACT_THRESHOLD = 1e-3


class TactileSensorSpec:
    def __init__(
            self, width: int = 60, height: int = 40, gel_width: float = 0.15,
            gel_height: float = 0.10, rest_depth: float = 0.10,
            max_indentation: float = 0.03,
            contact_threshold: float = DEFAULT_CONTACT_THRESHOLD):
        if width < 1 or height < 1:
            raise ValueError("Bad tactile resolution %dx%d" % (width, height))
        if not (gel_width > 0 and gel_height > 0):
            raise ValueError("Gel size must be positive")
        if not (0 < max_indentation < rest_depth):
            raise ValueError(
                "Need 0 < max_indentation (%r) < rest_depth (%r)" % (
                    max_indentation, rest_depth))
        if not 0 <= contact_threshold < 1:
            raise ValueError(
                "Contact threshold must be in [0, 1): %r" % contact_threshold)

        self.width = int(width)  # type: int
        self.height = int(height)  # type: int
        self.gel_width = float(gel_width)  # type: float
        self.gel_height = float(gel_height)  # type: float
        self.rest_depth = float(rest_depth)  # type: float
        self.max_indentation = float(max_indentation)  # type: float
        self.contact_threshold = float(contact_threshold)  # type: float

    def __repr__(self):
        return "TactileSensorSpec(%dx%d, gel %gx%g, rest %g, max %g)" % (
            self.width, self.height, self.gel_width, self.gel_height,
            self.rest_depth, self.max_indentation)

    def camera(self, pose: RigidTransform = None) -> PinholeCamera:
        """Internal camera whose image spans the gel at rest depth."""
        return PinholeCamera(
            fx=self.width * self.rest_depth / self.gel_width,
            fy=self.height * self.rest_depth / self.gel_height,
            cx=(self.width - 1) / 2, cy=(self.height - 1) / 2,
            width=self.width, height=self.height, pose=pose)

    def gel_center(self, pose: RigidTransform) -> np.ndarray:
        return pose.apply([0.0, 0.0, self.rest_depth])

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "gel_width": self.gel_width, "gel_height": self.gel_height,
            "rest_depth": self.rest_depth,
            "max_indentation": self.max_indentation,
            "contact_threshold": self.contact_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TactileSensorSpec":
        return cls(**d)


class DepthCalibration:
    """Affine map depth = slope * intensity + intercept."""

    def __init__(self, slope: float, intercept: float):
        self.slope = float(slope)  # type: float
        self.intercept = float(intercept)  # type: float

    def __repr__(self):
        return "DepthCalibration(slope=%g, intercept=%g)" % (
            self.slope, self.intercept)

    @classmethod
    def from_spec(cls, spec: TactileSensorSpec) -> "DepthCalibration":
        return cls(-spec.max_indentation, spec.rest_depth)

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d: dict) -> "DepthCalibration":
        return cls(d["slope"], d["intercept"])


class TactileReading:
    """A tactile image together with the sensor-to-world pose."""

    def __init__(
            self, image, pose: RigidTransform, spec: TactileSensorSpec,
            sensor_index: int = 0, grasp_index: int = 0):
        image = np.array(image, dtype=np.float64)
        if image.shape != (spec.height, spec.width):
            raise ValueError(
                "Tactile image shape %s does not match sensor %dx%d" % (
                    image.shape, spec.width, spec.height))
        if image.size and (image.min() < 0 or image.max() > 1):
            raise ValueError("Tactile intensities must lie in [0, 1]")
        image.flags.writeable = False

        self.image = image  # type: np.ndarray
        self.pose = pose  # type: RigidTransform
        self.spec = spec  # type: TactileSensorSpec
        # Finger the sensor is mounted on (thumb = 0 ... pinky = 4)
        self.sensor_index = sensor_index  # type: int
        self.grasp_index = grasp_index  # type: int

    def __repr__(self):
        return "TactileReading(sensor %d, grasp %d, %d contact pixels)" % (
            self.sensor_index, self.grasp_index, self.num_contacts())

    def contact_mask(self) -> np.ndarray:
        return self.image > self.spec.contact_threshold

    def num_contacts(self) -> int:
        return int(np.count_nonzero(self.contact_mask()))

    def with_pose(self, pose: RigidTransform) -> "TactileReading":
        return TactileReading(
            self.image, pose, self.spec, self.sensor_index, self.grasp_index)


class ContactPatch:
    def __init__(self, points: PointCloud, sensor_index: int,
                 grasp_index: int = 0):
        self.points = points  # type: PointCloud
        self.sensor_index = sensor_index  # type: int
        self.grasp_index = grasp_index  # type: int

    def __repr__(self):
        return "ContactPatch(sensor %d, %d points)" % (
            self.sensor_index, len(self.points))

    def is_empty(self) -> bool:
        return self.points.is_empty()


def indentation_from_hits(
        t: np.ndarray, spec: TactileSensorSpec) -> np.ndarray:
    """Normalized gel indentation for ray hit depths (inf = no hit)."""
    delta = np.clip(spec.rest_depth - t, 0.0, spec.max_indentation)
    delta[~np.isfinite(t)] = 0.0
    return delta / spec.max_indentation


def render_tactile(
        mesh: TriangleMesh, pose: RigidTransform, spec: TactileSensorSpec,
        tree: bvh_module.Bvh = None, sensor_index: int = 0,
        grasp_index: int = 0) -> TactileReading:
    """Synthesize the tactile image of a sensor at pose touching mesh."""
    if mesh.is_empty():
        return TactileReading(
            np.zeros((spec.height, spec.width)), pose, spec, sensor_index,
            grasp_index)
    if tree is None:
        tree = bvh_module.build_bvh(mesh)
    origins, directions = render.camera_rays(spec.camera(pose))
    t, _ = bvh_module.raycast(mesh, tree, origins, directions)
    image = indentation_from_hits(t, spec).reshape(spec.height, spec.width)
    return TactileReading(image, pose, spec, sensor_index, grasp_index)


def tactile_depth(
        reading: TactileReading,
        calibration: DepthCalibration = None) -> DepthImage:
    """Per-pixel gel surface depth at contact pixels; invalid elsewhere."""
    if calibration is None:
        calibration = DepthCalibration.from_spec(reading.spec)
    depth = calibration.slope * reading.image + calibration.intercept
    depth[~reading.contact_mask()] = np.nan
    return DepthImage(depth)


def contact_patch(
        reading: TactileReading,
        calibration: DepthCalibration = None) -> ContactPatch:
    """World-frame points of the contact region."""
    cloud = geometry.backproject_depth(
        reading.spec.camera(reading.pose), tactile_depth(reading, calibration))
    return ContactPatch(cloud, reading.sensor_index, reading.grasp_index)


def _lad_objective(x, y, slope, intercept) -> float:
    return float(np.abs(y - (slope * x + intercept)).sum())


def contact_pixels(
        image: np.ndarray, depth: DepthImage,
        contact_threshold: float = DEFAULT_CONTACT_THRESHOLD) -> np.ndarray:
    """Pixels in contact that also have a valid depth."""
    return (image > contact_threshold) & depth.valid_mask()


def train_depth_net(
        pairs: Sequence[Tuple[np.ndarray, DepthImage]],
        contact_threshold: float = DEFAULT_CONTACT_THRESHOLD
) -> DepthCalibration:
    """Least-absolute-deviation fit of depth against intensity.

    Only pixels that are in contact (intensity above threshold) and have a
    valid depth take part, and every pair must have some.  Exactly linear
    data is solved in closed form.
    """
    if len(pairs) < 2:
        raise ValueError(
            "Need at least 2 image/depth pairs, got %d" % len(pairs))

    xs = []
    ys = []
    for i, (image, depth) in enumerate(pairs):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != depth.values.shape:
            raise ValueError("Image shape %s does not match depth %s" % (
                image.shape, depth.values.shape))
        mask = contact_pixels(image, depth, contact_threshold)
        if not mask.any():
            raise ValueError("Training pair %d has no contact pixels" % i)
        xs.append(image[mask])
        ys.append(depth.values[mask])
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if np.ptp(x) == 0:
        raise ValueError(
            "Rank-deficient calibration data: all %d contact pixels have "
            "intensity %g" % (len(x), x[0]))

    design = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residual = np.abs(design @ (slope, intercept) - y).max()
    if residual <= 1e-12 * max(1.0, np.abs(y).max()):
        return DepthCalibration(slope, intercept)

    lad = QuantileRegressor(quantile=0.5, alpha=0.0, solver="highs")
    lad.fit(x.reshape(-1, 1), y)
    fit = DepthCalibration(lad.coef_[0], lad.intercept_)
    # The LP optimum can never be worse than the least squares solution
    if _lad_objective(x, y, slope, intercept) < _lad_objective(
            x, y, fit.slope, fit.intercept):
        return DepthCalibration(slope, intercept)
    return fit


def salt_noise(
        values: np.ndarray, fraction: float, seed: int,
        salt: float = 1.0) -> np.ndarray:
    """Copy of values with a random fraction of entries set to salt."""
    if not 0 <= fraction <= 1:
        raise ValueError("Noise fraction must be in [0, 1]: %r" % fraction)
    out = np.array(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    count = int(round(fraction * out.size))
    idx = rng.choice(out.size, size=count, replace=False)
    out.flat[idx] = salt
    return out


def calibration_pairs(
        readings: List[TactileReading], meshes: List[TriangleMesh]
) -> List[Tuple[np.ndarray, DepthImage]]:
    """Ground-truth (image, gel depth) pairs for fitting a calibration.

    The gel depth at a contact pixel is the clipped ray hit depth.
    """
    pairs = []
    for reading, mesh in zip(readings, meshes):
        spec = reading.spec
        tree = bvh_module.build_bvh(mesh)
        origins, directions = render.camera_rays(spec.camera(reading.pose))
        t, _ = bvh_module.raycast(mesh, tree, origins, directions)
        depth = np.maximum(t, spec.rest_depth - spec.max_indentation)
        depth[t > spec.rest_depth] = np.nan
        pairs.append((reading.image, DepthImage(
            depth.reshape(spec.height, spec.width))))
    return pairs
