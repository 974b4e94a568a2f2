"""Tests for the grasp module."""

import unittest

import numpy as np

import geometry
import grasp
import shapes
import tactile
from geometry import TriangleMesh
from grasp import NoTouchError
from hand import HandModel


class TestPlaceGrasp(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.model = HandModel()
        cls.sphere = shapes.icosphere(0.5, 3)
        cls.grasps = [
            grasp.place_grasp(cls.sphere, cls.model, seed) for seed in (0, 1)]

    def test_sphere_contacts(self):
        for g in self.grasps:
            touching = np.count_nonzero(g.errors <= grasp.CONTACT_TOLERANCE)
            self.assertGreaterEqual(touching, 2, g)
            self.assertGreaterEqual(len(g.contacts()), 1)

    def test_deterministic(self):
        again = grasp.place_grasp(self.sphere, self.model, 0)
        np.testing.assert_array_equal(
            self.grasps[0].pose.to_vector(), again.pose.to_vector())
        self.assertEqual(self.grasps[0].contacts(), again.contacts())

    def test_different_seeds(self):
        self.assertFalse(np.array_equal(
            self.grasps[0].pose.to_vector(), self.grasps[1].pose.to_vector()))

    def test_patches_on_surface(self):
        for g in self.grasps:
            for reading in g.readings:
                patch = tactile.contact_patch(reading)
                d = geometry.point_mesh_distance(
                    self.sphere, patch.points.points)
                self.assertLess(d.max(), 1e-6)

    def test_within_limits(self):
        for g in self.grasps:
            self.assertLessEqual(
                np.abs(g.pose.joint_angles).max(), self.model.joint_limit)

    def test_contact_targets(self):
        g = self.grasps[0]
        points, normals = g.contact_targets()
        self.assertEqual(len(g.contacts()), len(points))
        np.testing.assert_allclose(
            0.5, np.linalg.norm(points, axis=1), atol=0.02)

    def test_tiny_triangle(self):
        mesh = TriangleMesh(
            [[0, 0, 0], [1e-6, 0, 0], [0, 1e-6, 0]], [[0, 1, 2]])
        with self.assertRaises(NoTouchError) as ctx:
            grasp.place_grasp(mesh, self.model, 3)
        self.assertEqual(3, ctx.exception.seed)

    def test_empty_mesh(self):
        with self.assertRaises(ValueError):
            grasp.place_grasp(geometry.empty_mesh(), self.model, 0)


class TestChooseTargets(unittest.TestCase):
    def test_antipodal_pair(self):
        model = HandModel()
        sphere = shapes.icosphere(0.5, 3)
        wrist = grasp.place_wrist(sphere, model, np.random.default_rng(0))
        points, normals = grasp.choose_targets(sphere, wrist, model, seed=0)
        self.assertEqual(grasp.MAX_TARGETS, len(points))
        self.assertLess(normals[0] @ normals[1], -0.9)
        # Farthest-point samples are distinct
        d = np.linalg.norm(points[:, None] - points[None], axis=2)
        self.assertGreater(d[np.triu_indices(len(points), 1)].min(), 0.05)


if __name__ == '__main__':
    unittest.main()
