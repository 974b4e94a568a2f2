"""Tests for the tactile module."""

import unittest

import numpy as np
from scipy.spatial.transform import Rotation

import geometry
import shapes
import tactile
from geometry import DepthImage, RigidTransform, TriangleMesh
from tactile import TactileSensorSpec


def wall(z: float, size: float = 1.0) -> TriangleMesh:
    """Square facing -z in the sensor frame, at depth z."""
    return TriangleMesh(
        [[-size, -size, z], [size, -size, z], [size, size, z],
         [-size, size, z]],
        [[0, 2, 1], [0, 3, 2]])


def random_pose(seed: int) -> RigidTransform:
    rng = np.random.default_rng(seed)
    return RigidTransform(
        Rotation.random(random_state=seed).as_matrix(), rng.normal(size=3))


class TestSensorSpec(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ValueError):
            TactileSensorSpec(rest_depth=0.02, max_indentation=0.03)
        with self.assertRaises(ValueError):
            TactileSensorSpec(width=0)

    def test_camera_spans_gel(self):
        spec = TactileSensorSpec()
        cam = spec.camera()
        # Pixel pitch on the gel plane times pixel count = gel size
        self.assertAlmostEqual(
            spec.gel_width, spec.width * spec.rest_depth / cam.fx)
        self.assertAlmostEqual(
            spec.gel_height, spec.height * spec.rest_depth / cam.fy)


class TestRenderTactile(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = TactileSensorSpec()

    def test_no_contact(self):
        mesh = wall(5.0)
        reading = tactile.render_tactile(
            mesh, RigidTransform.identity(), self.spec)
        self.assertFalse(np.any(reading.image))
        self.assertEqual(0, reading.num_contacts())

    def test_full_indentation(self):
        z = self.spec.rest_depth - self.spec.max_indentation
        reading = tactile.render_tactile(
            wall(z), RigidTransform.identity(), self.spec)
        np.testing.assert_allclose(1.0, reading.image, atol=1e-9)

    def test_pressed_sphere(self):
        spec = self.spec
        radius = 0.2
        press = spec.max_indentation / 2
        sphere = shapes.icosphere(radius, 5).transformed(
            RigidTransform.from_translation(
                (0, 0, spec.rest_depth + radius - press)))
        reading = tactile.render_tactile(
            sphere, RigidTransform.identity(), spec)
        image = reading.image

        row, col = np.unravel_index(np.argmax(image), image.shape)
        self.assertLessEqual(abs(row - spec.camera().cy), 1)
        self.assertLessEqual(abs(col - spec.camera().cx), 1)
        self.assertAlmostEqual(0.5, image.max(), delta=0.01)

        # Mean intensity decreases ring by ring away from the center
        cam = spec.camera()
        v, u = np.mgrid[0:spec.height, 0:spec.width]
        r = np.hypot((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy)
        rings = np.digitize(r, np.linspace(0, r.max(), 8))
        means = [image[rings == k].mean() for k in np.unique(rings)]
        self.assertTrue(np.all(np.diff(means) <= 0))

    def test_depth_linearity(self):
        spec = self.spec
        for z in np.linspace(
                spec.rest_depth - spec.max_indentation + 1e-4,
                spec.rest_depth - 1e-4, 9):
            reading = tactile.render_tactile(
                wall(z), RigidTransform.identity(), spec)
            depth = tactile.tactile_depth(reading)
            np.testing.assert_allclose(z, depth.values, atol=1e-9)


class TestTactileDepth(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = TactileSensorSpec(width=6, height=4)

    def test_no_contact(self):
        reading = tactile.TactileReading(
            np.zeros((4, 6)), RigidTransform.identity(), self.spec)
        self.assertEqual(0, tactile.tactile_depth(reading).num_valid())
        self.assertTrue(tactile.contact_patch(reading).is_empty())

    def test_endpoints(self):
        image = np.zeros((4, 6))
        image[1, 2] = 1.0
        image[2, 3] = 0.5
        reading = tactile.TactileReading(
            image, RigidTransform.identity(), self.spec)
        depth = tactile.tactile_depth(reading)
        self.assertAlmostEqual(
            self.spec.rest_depth - self.spec.max_indentation,
            depth.values[1, 2], places=15)
        self.assertAlmostEqual(
            self.spec.rest_depth - 0.5 * self.spec.max_indentation,
            depth.values[2, 3], places=15)
        self.assertEqual(2, depth.num_valid())

    def test_threshold(self):
        image = np.full((4, 6), tactile.DEFAULT_CONTACT_THRESHOLD)
        reading = tactile.TactileReading(
            image, RigidTransform.identity(), self.spec)
        self.assertEqual(0, tactile.tactile_depth(reading).num_valid())

    def test_rejects_bad_images(self):
        with self.assertRaises(ValueError):
            tactile.TactileReading(
                np.zeros((6, 4)), RigidTransform.identity(), self.spec)
        with self.assertRaises(ValueError):
            tactile.TactileReading(
                np.full((4, 6), 1.5), RigidTransform.identity(), self.spec)


class TestContactPatch(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = TactileSensorSpec()

    def test_flat_wall_is_planar(self):
        pose = random_pose(1)
        z = self.spec.rest_depth - 0.01
        mesh = wall(z).transformed(pose)
        patch = tactile.contact_patch(
            tactile.render_tactile(mesh, pose, self.spec))
        self.assertEqual(self.spec.width * self.spec.height,
                         len(patch.points))
        normal = pose.rotation[:, 2]
        heights = (patch.points.points - pose.translation) @ normal
        np.testing.assert_allclose(z, heights, atol=1e-9)

    def test_sphere_patch_on_surface(self):
        radius = 0.2
        pose = random_pose(2)
        local = shapes.icosphere(radius, 4).transformed(
            RigidTransform.from_translation(
                (0.01, -0.02, self.spec.rest_depth + radius - 0.012)))
        mesh = local.transformed(pose)
        reading = tactile.render_tactile(mesh, pose, self.spec, grasp_index=3)
        patch = tactile.contact_patch(reading)
        self.assertGreater(len(patch.points), 10)
        self.assertEqual(3, patch.grasp_index)
        d = geometry.point_mesh_distance(mesh, patch.points.points)
        self.assertLess(d.max(), 1e-6)

        # Within max indentation of the gel plane, in the sensor frame
        local_points = pose.inverse().apply(patch.points.points)
        self.assertTrue(np.all(
            local_points[:, 2] >= self.spec.rest_depth -
            self.spec.max_indentation - 1e-12))
        self.assertTrue(np.all(
            local_points[:, 2] <= self.spec.rest_depth + 1e-12))

    def test_frame_consistency(self):
        radius = 0.2
        pose = random_pose(3)
        mesh = shapes.icosphere(radius, 3).transformed(
            RigidTransform.from_translation(
                (0, 0, self.spec.rest_depth + radius - 0.01)))
        motion = random_pose(4)
        a = tactile.contact_patch(tactile.render_tactile(
            mesh, RigidTransform.identity(), self.spec))
        b = tactile.contact_patch(tactile.render_tactile(
            mesh.transformed(motion), motion, self.spec))
        np.testing.assert_allclose(
            motion.apply(a.points.points), b.points.points, atol=1e-9)


class TestDepthCalibration(unittest.TestCase):
    def setUp(self) -> None:
        self.spec = TactileSensorSpec()
        rng = np.random.default_rng(0)
        self.images = [rng.uniform(0, 1, size=(40, 60)) for _ in range(3)]

    def exact_pairs(self):
        pairs = []
        for image in self.images:
            depth = self.spec.rest_depth - image * self.spec.max_indentation
            pairs.append((image, DepthImage(depth)))
        return pairs

    def test_exact_linear(self):
        fit = tactile.train_depth_net(self.exact_pairs())
        self.assertAlmostEqual(
            -self.spec.max_indentation, fit.slope, delta=1e-9)
        self.assertAlmostEqual(self.spec.rest_depth, fit.intercept,
                               delta=1e-9)

    def test_salt_noise(self):
        pairs = []
        for i, (image, depth) in enumerate(self.exact_pairs()):
            noisy = tactile.salt_noise(
                depth.values, 0.1, seed=i, salt=self.spec.rest_depth)
            pairs.append((image, DepthImage(noisy)))
        fit = tactile.train_depth_net(pairs)
        true_slope = -self.spec.max_indentation
        self.assertLess(abs(fit.slope - true_slope), 0.05 * abs(true_slope))

        # No slope on a fine grid does better on the L1 objective
        x = np.concatenate([p[0].ravel() for p in pairs])
        y = np.concatenate([p[1].values.ravel() for p in pairs])
        best = min(
            np.abs(y - (s * x + np.median(y - s * x))).sum()
            for s in np.linspace(2 * true_slope, 0, 201))
        ours = np.abs(y - (fit.slope * x + fit.intercept)).sum()
        self.assertLessEqual(ours, best * (1 + 1e-6))

    def test_constant_intensity(self):
        image = np.full((40, 60), 0.4)
        depth = DepthImage(np.full((40, 60), 0.088))
        with self.assertRaises(ValueError):
            tactile.train_depth_net([(image, depth), (image, depth)])

    def test_no_contact(self):
        image = np.zeros((40, 60))
        depth = DepthImage.invalid(60, 40)
        with self.assertRaises(ValueError):
            tactile.train_depth_net([(image, depth), (image, depth)])

    def test_pair_without_contact(self):
        image = np.zeros((40, 60))
        depth = DepthImage.invalid(60, 40)
        with self.assertRaises(ValueError) as ctx:
            tactile.train_depth_net(self.exact_pairs() + [(image, depth)])
        self.assertIn("pair 3", str(ctx.exception))

    def test_too_few_pairs(self):
        with self.assertRaises(ValueError):
            tactile.train_depth_net(self.exact_pairs()[:1])

    def test_calibration_pairs_are_exact(self):
        pose = RigidTransform.identity()
        mesh = shapes.icosphere(0.2, 3).transformed(
            RigidTransform.from_translation(
                (0, 0, self.spec.rest_depth + 0.2 - 0.01)))
        reading = tactile.render_tactile(mesh, pose, self.spec)
        pairs = tactile.calibration_pairs([reading, reading], [mesh, mesh])
        fit = tactile.train_depth_net(pairs)
        self.assertAlmostEqual(
            -self.spec.max_indentation, fit.slope, delta=1e-9)


if __name__ == '__main__':
    unittest.main()
