"""Tests for the datagen module."""

import filecmp
import os
import tempfile
import unittest

import numpy as np

import datagen
import geometry
import hand
import shapes
import tactile
from datagen import DatagenSettings, SceneSpec
from geometry import VoxelGrid


def small_settings() -> DatagenSettings:
    return DatagenSettings(
        grid=VoxelGrid.cube((-0.6, -0.6, -0.6), 1.2, 12), num_points=400,
        image_size=48, focal=60.0)


def sphere_spec(**kwargs) -> SceneSpec:
    return SceneSpec("sphere", resolution=2, cameras=4, grasps=1, **kwargs)


class TestSceneSpec(unittest.TestCase):
    def test_validation(self):
        with self.assertRaises(ValueError):
            SceneSpec(stiffness=0)
        with self.assertRaises(ValueError):
            SceneSpec(stiffness=1.5)
        with self.assertRaises(ValueError):
            SceneSpec(cameras=0)
        with self.assertRaises(ValueError):
            SceneSpec("teapot")

    def test_category_alias(self):
        spec = SceneSpec("bottle")
        self.assertEqual("bottle", spec.category)
        self.assertEqual("open-cylinder", spec.kind)
        self.assertGreater(
            len(geometry.boundary_edges(spec.load_mesh())), 0)


class TestNormalize(unittest.TestCase):
    def test_unit_cube(self):
        mesh = shapes.box((2.0, 1.0, 0.5)).transformed(
            geometry.RigidTransform.from_translation((3, 4, 5)))
        normalized, scale = datagen.normalize_mesh(mesh)
        lo, hi = normalized.bounds()
        np.testing.assert_allclose([-0.5, -0.25, -0.125], lo, atol=1e-12)
        np.testing.assert_allclose([0.5, 0.25, 0.125], hi, atol=1e-12)
        self.assertEqual(0.5, scale)


class TestIndentMesh(unittest.TestCase):
    def test_rigid_limit(self):
        mesh = shapes.icosphere(0.5, 2)
        same = datagen.indent_mesh(
            mesh, [[0, 0, 0.5]], [[0, 0, 1]], 1.0, 0.01, 0.3)
        np.testing.assert_array_equal(mesh.vertices, same.vertices)

    def test_flat_plate_profile(self):
        plate = shapes.box((2.0, 2.0, 0.1), 20)
        contact = np.array([0.0, 0.0, 0.05])
        indented = datagen.indent_mesh(
            plate, [contact], [[0, 0, 1]], 0.2, 0.02, 0.3)
        moved = plate.vertices[:, 2] - indented.vertices[:, 2]
        self.assertTrue(np.all(moved >= 0))
        np.testing.assert_array_equal(plate.faces, indented.faces)

        top = np.isclose(plate.vertices[:, 2], 0.05)
        r = np.linalg.norm(plate.vertices[top, :2], axis=1)
        order = np.argsort(r, kind="stable")
        profile = moved[top][order]
        self.assertAlmostEqual(0.02 * 0.8, profile[0], places=12)
        self.assertTrue(np.all(np.diff(profile) <= 1e-15))
        self.assertEqual(0.0, moved[top][r > 0.3 + 1e-9].max())

    def test_sphere_volume_shrinks(self):
        sphere = shapes.icosphere(0.5, 3)
        indented = datagen.indent_mesh(
            sphere, [[0, 0, 0.5], [0.5, 0, 0]], [[0, 0, 1], [1, 0, 0]],
            0.3, 0.015, 0.3)
        self.assertLess(
            geometry.mesh_volume(indented), geometry.mesh_volume(sphere))

    def test_bad_stiffness(self):
        with self.assertRaises(ValueError):
            datagen.indent_mesh(
                shapes.icosphere(0.5, 1), [[0, 0, 0.5]], [[0, 0, 1]], 0.0,
                0.01, 0.3)


class TestRingCameras(unittest.TestCase):
    def test_look_at_origin(self):
        cameras = datagen.ring_cameras(8, 2.5, 30.0, 32, 40.0)
        self.assertEqual(8, len(cameras))
        for camera in cameras:
            self.assertAlmostEqual(
                2.5, np.linalg.norm(camera.pose.translation))
            forward = camera.pose.rotation[:, 2]
            np.testing.assert_allclose(
                -camera.pose.translation / 2.5, forward, atol=1e-12)
            self.assertAlmostEqual(
                2.5 * np.sin(np.radians(30)), camera.pose.translation[2])


class TestGenerateDatapoint(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.settings = small_settings()
        cls.rigid = datagen.generate_datapoint(
            sphere_spec(), 11, cls.settings)

    def test_cloud_on_surface(self):
        dp = self.rigid
        self.assertGreater(len(dp.cloud), 0)
        self.assertLessEqual(len(dp.cloud), self.settings.num_points)
        d = geometry.point_mesh_distance(dp.mesh, dp.cloud.points)
        self.assertLess(d.max(), 1e-6)

    def test_readings_on_surface(self):
        dp = self.rigid
        self.assertGreater(len(dp.readings), 0)
        for reading in dp.readings:
            self.assertEqual(0, reading.grasp_index)
            patch = tactile.contact_patch(reading)
            d = geometry.point_mesh_distance(dp.mesh, patch.points.points)
            self.assertLess(d.max(), 1e-6)

    def test_readings_per_grasp(self):
        dp = self.rigid
        reading = dp.readings[0]
        extra = [
            tactile.TactileReading(reading.image, reading.pose, reading.spec,
                                   f, 0)
            for f in range(hand.NUM_FINGERS + 1)]

        def rebuild(readings):
            return datagen.DataPoint(
                dp.cloud, readings, dp.hand_poses, dp.wnf, dp.mesh,
                dp.cameras, dp.depths, dp.view_index, dp.meta)

        with self.assertRaises(ValueError):
            rebuild(extra)
        # Five readings in each of two grasps is fine
        second = [
            tactile.TactileReading(r.image, r.pose, r.spec, r.sensor_index, 1)
            for r in extra[:-1]]
        self.assertEqual(10, len(rebuild(extra[:-1] + second).readings))

    def test_wnf_integral_away_from_surface(self):
        dp = self.rigid
        centers = dp.wnf.centers()
        r = np.linalg.norm(centers, axis=1)
        away = np.abs(r - 0.5) > 0.1
        values = dp.wnf.flat_data()[away]
        np.testing.assert_allclose(
            np.round(values), values, atol=1e-3)
        self.assertIsNone(dp.wnf_undeformed)

    def test_deterministic(self):
        again = datagen.generate_datapoint(sphere_spec(), 11, self.settings)
        np.testing.assert_array_equal(self.rigid.cloud.points,
                                      again.cloud.points)
        np.testing.assert_array_equal(
            self.rigid.hand_poses[0].to_vector(),
            again.hand_poses[0].to_vector())

    def test_other_seed_same_geometry(self):
        other = datagen.generate_datapoint(sphere_spec(), 12, self.settings)
        np.testing.assert_array_equal(
            self.rigid.mesh.vertices, other.mesh.vertices)
        np.testing.assert_array_equal(self.rigid.wnf.data, other.wnf.data)
        self.assertFalse(np.array_equal(
            self.rigid.hand_poses[0].to_vector(),
            other.hand_poses[0].to_vector()))

    def test_deformable_rigid_limit(self):
        dp = datagen.generate_datapoint(
            sphere_spec(deformable=True, stiffness=1.0), 11, self.settings)
        np.testing.assert_array_equal(
            self.rigid.mesh.vertices, dp.mesh.vertices)
        np.testing.assert_array_equal(self.rigid.wnf.data, dp.wnf.data)
        np.testing.assert_array_equal(
            self.rigid.cloud.points, dp.cloud.points)
        self.assertIsNone(dp.wnf_undeformed)

    def test_deformable(self):
        dp = datagen.generate_datapoint(
            sphere_spec(deformable=True, stiffness=0.3), 11, self.settings)
        self.assertLess(geometry.mesh_volume(dp.mesh),
                        geometry.mesh_volume(self.rigid.mesh))
        np.testing.assert_array_equal(
            self.rigid.wnf.data, dp.wnf_undeformed.data)
        self.assertIs(dp.wnf_undeformed, dp.target("undeformed"))
        self.assertIs(dp.wnf, dp.target("deformed"))
        for reading in dp.readings:
            patch = tactile.contact_patch(reading)
            d = geometry.point_mesh_distance(dp.mesh, patch.points.points)
            self.assertLess(d.max(), 1e-6)

    def test_write_and_load(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "scene")
            datagen.write_datapoint(path, self.rigid, self.settings.hand)
            self.assertTrue(os.path.exists(os.path.join(path, "view_3.depth")))
            loaded = datagen.load_datapoint(path)
            model = datagen.load_hand_model(path)

        self.assertEqual(self.rigid.meta, loaded.meta)
        self.assertEqual(len(self.rigid.readings), len(loaded.readings))
        for a, b in zip(self.rigid.readings, loaded.readings):
            np.testing.assert_allclose(a.image, b.image, atol=1e-5)
            np.testing.assert_array_equal(a.pose.matrix(), b.pose.matrix())
            self.assertEqual(a.sensor_index, b.sensor_index)
        np.testing.assert_array_equal(
            self.rigid.cloud.points, loaded.cloud.points)
        np.testing.assert_allclose(
            self.rigid.wnf.data, loaded.wnf.data, atol=1e-6)
        np.testing.assert_allclose(
            self.rigid.hand_poses[0].to_vector(),
            loaded.hand_poses[0].to_vector(), atol=1e-12)
        np.testing.assert_array_equal(
            self.settings.hand.segment_lengths, model.segment_lengths)


class TestGenerateDataset(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.specs = [
            sphere_spec(),
            SceneSpec("box", resolution=2, cameras=4, grasps=1)]

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_manifest(self):
        out = os.path.join(self.tmp.name, "a")
        manifest = datagen.generate_dataset(
            self.specs, (2, 1, 1), out, small_settings(), seed=100)
        rows = datagen.read_manifest(manifest)
        self.assertEqual(4, len(rows))
        self.assertEqual(
            ["train", "train", "test", "val"], [r["split"] for r in rows])
        self.assertEqual(4, len({r["seed"] for r in rows}))
        self.assertEqual(
            ["sphere", "box", "sphere", "box"],
            [r["category"] for r in rows])
        for row in rows:
            self.assertTrue(os.path.exists(os.path.join(
                datagen.scene_path(manifest, row), "mesh.obj")))

        again = os.path.join(self.tmp.name, "b")
        datagen.generate_dataset(
            self.specs, (2, 1, 1), again, small_settings(), seed=100,
            threads=2)
        cmp = filecmp.dircmp(out, again)
        self.assertEqual([], cmp.diff_files)
        for name in cmp.common_dirs:
            sub = filecmp.dircmp(
                os.path.join(out, name), os.path.join(again, name))
            self.assertEqual([], sub.diff_files)
            self.assertEqual([], sub.left_only + sub.right_only)

    def test_cleanup_on_failure(self):
        out = os.path.join(self.tmp.name, "c")
        specs = [sphere_spec(), SceneSpec(
            path=os.path.join(self.tmp.name, "missing.obj"))]
        with self.assertRaises(FileNotFoundError):
            datagen.generate_dataset(
                specs, (2, 0, 0), out, small_settings())
        self.assertEqual([], os.listdir(out))

    def test_bad_counts(self):
        with self.assertRaises(ValueError):
            datagen.generate_dataset(
                self.specs, (0, 0, 0), self.tmp.name, small_settings())
        with self.assertRaises(ValueError):
            datagen.generate_dataset(
                self.specs, (1, -1, 0), self.tmp.name, small_settings())


if __name__ == '__main__':
    unittest.main()
