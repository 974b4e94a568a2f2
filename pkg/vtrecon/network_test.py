"""Tests for the network module."""

import unittest
from collections import OrderedDict

import numpy as np

import network
from geometry import PointCloud, VoxelGrid
from network import (
    Architecture, EncoderKind, Fusion, ReconModel, SceneInput)
from queries import QueryBatch


def small_arch(**kwargs) -> Architecture:
    args = dict(
        feature_grid=VoxelGrid.cube((-0.6, -0.6, -0.6), 1.2, 6), d_p=4,
        d_t=4, point_hidden=5, tactile_shape=(3, 4), tactile_hidden=6,
        decoder_width=8)
    args.update(kwargs)
    return Architecture(**args)


def random_scene(rng, points=40, readings=2) -> SceneInput:
    cloud = PointCloud(rng.uniform(-0.5, 0.5, size=(points, 3)))
    return SceneInput(cloud, rng.uniform(0, 1, size=(readings, 12)))


def random_queries(rng, n=30, readings=2) -> QueryBatch:
    return QueryBatch(
        rng.uniform(-0.6, 0.6, size=(n, 3)),
        rng.integers(-1, readings, size=n), rng.uniform(-0.5, 1.5, size=n))


def zeroed(model: ReconModel) -> ReconModel:
    params = OrderedDict(
        (name, np.zeros_like(p)) for name, p in model.params.items())
    return ReconModel(model.arch, params)


class TestArchitecture(unittest.TestCase):
    def test_fused_dimensions(self):
        self.assertEqual(35, Architecture().fused_dim)
        self.assertEqual(67, Architecture(fusion=Fusion.CONCAT).fused_dim)
        model = ReconModel(Architecture(fusion="concat"))
        self.assertEqual(67, model.decoder.widths[0])
        self.assertEqual([67, 128, 128, 128, 128, 1], model.decoder.widths)

    def test_addition_needs_equal_widths(self):
        with self.assertRaises(ValueError):
            Architecture(d_p=32, d_t=16)
        Architecture(d_p=32, d_t=16, fusion=Fusion.CONCAT)

    def test_dict_round_trip(self):
        arch = small_arch(encoder=EncoderKind.MULTIPLANE, plane_resolution=8)
        again = Architecture.from_dict(arch.to_dict())
        self.assertEqual(arch.to_dict(), again.to_dict())

    def test_parameter_shapes(self):
        model = ReconModel(small_arch(), seed=3)
        self.assertEqual((27, 4, 4), model.params["conv0.w"].shape)
        self.assertEqual((12, 6), model.params["tactile.w0"].shape)
        self.assertEqual((8, 1), model.params["decoder.w4"].shape)
        plane = ReconModel(small_arch(encoder="multiplane"))
        self.assertEqual((9, 4, 4), plane.params["conv1.w"].shape)

    def test_init_is_seeded(self):
        a = ReconModel(small_arch(), seed=1)
        b = ReconModel(small_arch(), seed=1)
        c = ReconModel(small_arch(), seed=2)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        self.assertFalse(np.array_equal(
            a.params["point.w0"], c.params["point.w0"]))

    def test_bad_params(self):
        model = ReconModel(small_arch())
        params = OrderedDict(model.params)
        params["decoder.b4"] = np.zeros(2)
        with self.assertRaises(ValueError):
            ReconModel(model.arch, params)


class TestEncodeVisual(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(0)
        self.model = ReconModel(small_arch(), seed=0)
        self.cloud = PointCloud(self.rng.uniform(-0.5, 0.5, size=(60, 3)))

    def test_zero_params(self):
        volume = network.encode_visual(zeroed(self.model), self.cloud)
        self.assertEqual((6, 6, 6, 4), volume.data.shape)
        self.assertFalse(np.any(volume.data))

    def test_permutation_invariant(self):
        a = network.encode_visual(self.model, self.cloud)
        shuffled = PointCloud(self.rng.permutation(self.cloud.points))
        b = network.encode_visual(self.model, shuffled)
        np.testing.assert_array_equal(a.data, b.data)

    def test_single_point_receptive_field(self):
        # Voxel (2, 3, 1) of the 6^3 grid with spacing 0.2
        point = PointCloud([[-0.6 + 0.2 * 2.5, -0.6 + 0.2 * 3.5,
                             -0.6 + 0.2 * 1.5]])
        model = ReconModel(small_arch(), seed=5)
        model.params["point.b1"] = np.abs(model.params["point.b1"]) + 1
        volume = network.encode_visual(model, point)
        nonzero = np.argwhere(np.any(volume.data != 0, axis=3))
        self.assertGreater(len(nonzero), 0)
        chebyshev = np.abs(nonzero - [2, 3, 1]).max(axis=1)
        self.assertTrue(np.all(chebyshev <= 2))

    def test_empty_cloud(self):
        with self.assertRaises(ValueError):
            network.encode_visual(self.model, PointCloud())
        with self.assertRaises(ValueError):
            SceneInput(PointCloud())

    def test_wrong_encoder(self):
        with self.assertRaises(ValueError):
            network.encode_visual_multiplane(self.model, self.cloud)


class TestEncodeMultiplane(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(1)
        self.model = ReconModel(
            small_arch(encoder=EncoderKind.MULTIPLANE, plane_resolution=8),
            seed=1)
        self.cloud = PointCloud(self.rng.uniform(-0.5, 0.5, size=(50, 3)))

    def test_zero_params(self):
        planes = network.encode_visual_multiplane(
            zeroed(self.model), self.cloud)
        self.assertEqual(3, len(planes))
        for plane in planes:
            self.assertEqual((8, 8, 4), plane.shape)
            self.assertFalse(np.any(plane))

    def test_permutation_invariant(self):
        a = network.encode_visual_multiplane(self.model, self.cloud)
        b = network.encode_visual_multiplane(
            self.model, PointCloud(self.cloud.points[::-1]))
        for plane_a, plane_b in zip(a, b):
            np.testing.assert_array_equal(plane_a, plane_b)

    def test_single_point_receptive_field(self):
        # Plane spacing is 1.2 / 8 = 0.15; the point sits in cell 5, 2, 6
        point = PointCloud([[-0.6 + 0.15 * 5.5, -0.6 + 0.15 * 2.5,
                             -0.6 + 0.15 * 6.5]])
        self.model.params["point.b1"] = np.abs(
            self.model.params["point.b1"]) + 1
        planes = network.encode_visual_multiplane(self.model, point)
        for plane, cell in zip(planes, ([5, 2], [5, 6], [2, 6])):
            nonzero = np.argwhere(np.any(plane != 0, axis=2))
            self.assertGreater(len(nonzero), 0)
            self.assertTrue(np.all(np.abs(nonzero - cell).max(axis=1) <= 2))


class TestFuse(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(2)
        self.x = rng.normal(size=(7, 3))
        self.f_p = rng.normal(size=(7, 32))
        self.f_t = rng.normal(size=(7, 32))

    def test_addition(self):
        fused = network.fuse(
            self.x, self.f_p, np.zeros_like(self.f_t), Fusion.ADDITION)
        self.assertEqual((7, 35), fused.shape)
        np.testing.assert_array_equal(
            np.concatenate([self.x, self.f_p], axis=1), fused)

    def test_addition_commutes(self):
        np.testing.assert_array_equal(
            network.fuse(self.x, self.f_p, self.f_t, "addition"),
            network.fuse(self.x, self.f_t, self.f_p, "addition"))

    def test_concat(self):
        fused = network.fuse(self.x, self.f_p, self.f_t, Fusion.CONCAT)
        self.assertEqual((7, 67), fused.shape)
        np.testing.assert_array_equal(self.f_t, fused[:, 35:])

    def test_addition_mismatch(self):
        with self.assertRaises(ValueError):
            network.fuse(self.x, self.f_p, self.f_t[:, :16], Fusion.ADDITION)


class TestDecode(unittest.TestCase):
    def setUp(self) -> None:
        self.model = ReconModel(small_arch(), seed=4)
        self.fused = np.random.default_rng(4).normal(size=(9, 7))

    def test_zero_final_layer(self):
        self.model.params["decoder.w4"][:] = 0
        self.model.params["decoder.b4"][:] = 0.25
        np.testing.assert_array_equal(
            np.full(9, 0.25), network.decode_wnf(self.model, self.fused))

    def test_repeatable(self):
        np.testing.assert_array_equal(
            network.decode_wnf(self.model, self.fused),
            network.decode_wnf(self.model, self.fused))

    def test_independent_forward(self):
        x = self.fused
        p = self.model.params
        for i in range(5):
            x = x @ p["decoder.w%d" % i] + p["decoder.b%d" % i]
            if i < 4:
                x = np.maximum(x, 0)
        np.testing.assert_allclose(
            x[:, 0], network.decode_wnf(self.model, self.fused),
            rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            network.decode_wnf(self.model, self.fused[:, :5])


class TestLoss(unittest.TestCase):
    def test_values(self):
        self.assertEqual(0.0, network.wnf_loss([0.3, 0.9], [0.3, 0.9]))
        self.assertAlmostEqual(0.2, network.wnf_loss([0.7], [0.5]))
        pred = np.array([0.1, 0.4, 0.8])
        gt = np.array([0.0, 1.0, 1.0])
        self.assertAlmostEqual(
            2 * network.wnf_loss(pred, gt),
            network.wnf_loss(gt + 2 * (pred - gt), gt))


class TestForward(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(6)
        self.model = ReconModel(small_arch(), seed=6)
        self.scene = random_scene(self.rng)

    def test_vision_only_matches_zero_tactile(self):
        positions = self.rng.uniform(-0.6, 0.6, size=(20, 3))
        none = np.full(20, -1)
        a, _ = self.model.forward(self.scene, positions, none)
        vision = SceneInput(self.scene.cloud)
        b, _ = self.model.forward(vision, positions, none)
        np.testing.assert_array_equal(a, b)

    def test_predict_matches_forward(self):
        positions = self.rng.uniform(-0.6, 0.6, size=(50, 3))
        index = self.rng.integers(-1, 2, size=50)
        a, _ = self.model.forward(self.scene, positions, index)
        b = self.model.predict(self.scene, positions, index, chunk_size=7)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_missing_reading(self):
        with self.assertRaises(ValueError):
            self.model.forward(self.scene, np.zeros((1, 3)), [2])


class TestBackward(unittest.TestCase):
    def test_gradient_check_volume(self):
        rng = np.random.default_rng(7)
        for fusion in (Fusion.ADDITION, Fusion.CONCAT):
            model = ReconModel(small_arch(fusion=fusion), seed=7)
            batch = [(random_scene(rng), random_queries(rng))
                     for _ in range(2)]
            errors = network.gradient_check(model, batch, seed=7)
            self.assertEqual(set(model.params), set(errors))
            for name, error in errors.items():
                self.assertLessEqual(error, 1e-4, name)

    def test_gradient_check_multiplane(self):
        rng = np.random.default_rng(8)
        model = ReconModel(
            small_arch(encoder=EncoderKind.MULTIPLANE, plane_resolution=5),
            seed=8)
        batch = [(random_scene(rng), random_queries(rng))]
        for name, error in network.gradient_check(model, batch).items():
            self.assertLessEqual(error, 1e-4, name)

    def test_zero_loss_zero_gradient(self):
        rng = np.random.default_rng(9)
        model = ReconModel(small_arch(), seed=9)
        scene = random_scene(rng)
        queries = random_queries(rng)
        pred, _ = model.forward(
            scene, queries.positions, queries.tactile_index)
        exact = QueryBatch(queries.positions, queries.tactile_index, pred)
        loss, grads = network.loss_and_gradients(model, [(scene, exact)])
        self.assertEqual(0.0, loss)
        for grad in grads.values():
            self.assertFalse(np.any(grad))

    def test_duplicated_batch(self):
        rng = np.random.default_rng(10)
        model = ReconModel(small_arch(), seed=10)
        pair = (random_scene(rng), random_queries(rng))
        loss_1, grads_1 = network.loss_and_gradients(model, [pair])
        loss_2, grads_2 = network.loss_and_gradients(model, [pair, pair])
        self.assertAlmostEqual(loss_1, loss_2, places=12)
        for name in grads_1:
            np.testing.assert_allclose(
                grads_1[name], grads_2[name], rtol=1e-10, atol=1e-14)

    def test_broken_gradient_is_caught(self):
        rng = np.random.default_rng(11)
        model = ReconModel(small_arch(), seed=11)
        batch = [(random_scene(rng), random_queries(rng))]
        original = model.decoder.backward

        def broken(params, cache, grad, grads):
            out = original(params, cache, grad, grads)
            grads["decoder.w2"] *= 1.5
            return out

        model.decoder.backward = broken
        errors = network.gradient_check(model, batch, entries=20)
        self.assertGreater(errors["decoder.w2"], 1e-2)


if __name__ == '__main__':
    unittest.main()
