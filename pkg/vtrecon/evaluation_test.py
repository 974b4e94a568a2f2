"""Tests for the evaluation module."""

import json
import math
import os
import tempfile
import unittest

import numpy as np

import checkpoint
import datagen
import evaluation
import metrics
import shapes
from datagen import DataPoint, DatagenSettings, SceneSpec
from evaluation import EvalReport, SceneScore
from geometry import RigidTransform, TriangleMesh, VoxelGrid, empty_mesh
from network import ReconModel
from recon_test import GRID, slab_model, touching_datapoint
from tactile import TactileReading, TactileSensorSpec
from winding import WnfGrid

EVAL_GRID = VoxelGrid.cube((-0.6, -0.6, -0.6), 1.2, 16)

# Touched plane of the tactile benefit tests, and the gel that touches it
PLANE_X = 0.24
WIDE_GEL = TactileSensorSpec(gel_width=0.6, gel_height=0.4)

# Sensor frame looking along -x: its x axis is world y, its y axis world -z
FACING_MINUS_X = [[0, 0, -1], [1, 0, 0], [0, -1, 0]]


def touch_model(grid: VoxelGrid) -> ReconModel:
    """Like slab_model, but a reading's feature moves the surface to x =
    PLANE_X wherever it applies; the visual features are all zero."""
    model = slab_model(grid)
    for name, param in model.params.items():
        if name.split(".")[0] in ("point", "conv0", "conv1", "tactile"):
            param[:] = 0.0
    size = grid.dims[0] * grid.spacing
    model.params["tactile.b1"][0] = PLANE_X / size
    model.params["decoder.w0"][3, 0] = -1.0
    return model


def plane_datapoint(grid: VoxelGrid) -> DataPoint:
    """The square x = PLANE_X, touched once on each side of y = 0."""
    half = 0.55
    truth = TriangleMesh(
        [[PLANE_X, -half, -half], [PLANE_X, half, -half],
         [PLANE_X, half, half], [PLANE_X, -half, half]],
        [[0, 1, 2], [0, 2, 3]])
    # Full contact at half indentation puts the gel surface on the plane
    image = np.full((WIDE_GEL.height, WIDE_GEL.width), 0.5)
    standoff = WIDE_GEL.rest_depth - 0.5 * WIDE_GEL.max_indentation
    readings = [
        TactileReading(image, RigidTransform(
            FACING_MINUS_X, (PLANE_X + standoff, y, 0.0)), WIDE_GEL, 1, g)
        for g, y in enumerate((-0.27, 0.27))]
    cloud = metrics.sample_mesh_points(truth, 200)
    wnf = WnfGrid.from_flat_values(grid, np.zeros(grid.num_voxels))
    return DataPoint(cloud, readings, [], wnf, truth, [], [], 0, {})


class TestEvalReport(unittest.TestCase):
    def setUp(self) -> None:
        self.report = EvalReport([
            SceneScore("a", "sphere", "vtaco", 0.5, 2.0, 0.1),
            SceneScore("b", "box", "vtaco", 0.7, 4.0, 0.3),
            SceneScore("c", "box", "vtaco", 0.0, math.nan, math.nan),
            SceneScore("a", "sphere", "vision-only", 0.25, 3.0, 0.2),
        ], missing=["d"])

    def test_means(self):
        m = self.report.means("vtaco")
        self.assertEqual(3, m["count"])
        self.assertAlmostEqual(1.2 / 3, m["iou"], delta=1e-12)
        self.assertAlmostEqual(3.0, m["cd_x100"], delta=1e-12)
        self.assertAlmostEqual(0.2, m["emd"], delta=1e-12)
        self.assertEqual(["vtaco", "vision-only"], self.report.variants())
        self.assertEqual(["box", "sphere"], self.report.categories("vtaco"))
        box = self.report.means("vtaco", "box")
        self.assertAlmostEqual(0.35, box["iou"], delta=1e-12)
        self.assertEqual(4.0, box["cd_x100"])

    def test_all_nan_mean(self):
        report = EvalReport([
            SceneScore("c", "box", "vtaco", 0.0, math.nan, math.nan)])
        self.assertTrue(math.isnan(report.means("vtaco")["cd_x100"]))

    def test_write(self):
        with tempfile.TemporaryDirectory() as tmp:
            json_path, csv_path = self.report.write(tmp)
            with open(json_path) as f:
                data = json.load(f)
            self.assertEqual(["d"], data["missing"])
            self.assertEqual(4, len(data["scenes"]))
            self.assertIsNone(data["scenes"][2]["cd_x100"])
            self.assertEqual(
                0.25, data["variants"]["vision-only"]["iou"])
            self.assertEqual(
                2, data["variants"]["vtaco"]["categories"]["box"]["count"])

            rows = evaluation.read_report_csv(csv_path)
            self.assertEqual(
                [s.row()[:3] for s in self.report.scores],
                [s.row()[:3] for s in rows])
            self.assertEqual(0.7, rows[1].iou)
            self.assertTrue(math.isnan(rows[2].emd))


class TestScoreMesh(unittest.TestCase):
    def test_identical(self):
        sphere = shapes.icosphere(0.4, 2)
        iou, cd, emd = evaluation.score_mesh(
            sphere, sphere, EVAL_GRID, num_points=64)
        self.assertEqual(1.0, iou)
        self.assertEqual(0.0, cd)
        self.assertEqual(0.0, emd)

    def test_empty_prediction(self):
        iou, cd, emd = evaluation.score_mesh(
            empty_mesh(), shapes.icosphere(0.4, 2), EVAL_GRID)
        self.assertEqual(0.0, iou)
        self.assertTrue(math.isnan(cd))
        self.assertTrue(math.isnan(emd))


class TestEvaluateVariants(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.tmp = tempfile.TemporaryDirectory()
        settings = DatagenSettings(
            grid=GRID, num_points=300, image_size=40, focal=50.0)
        cls.manifest = datagen.generate_dataset(
            [SceneSpec("sphere", resolution=2, cameras=4, grasps=2)],
            (0, 1, 0), os.path.join(cls.tmp.name, "data"), settings,
            seed=5)
        cls.checkpoint = os.path.join(cls.tmp.name, "slab.vtc")
        checkpoint.write_checkpoint(cls.checkpoint, slab_model())

    @classmethod
    def tearDownClass(cls) -> None:
        cls.tmp.cleanup()

    def evaluate(self, manifest=None, **checkpoints):
        return evaluation.evaluate_variants(
            manifest or self.manifest, checkpoints or {
                "vision-only": self.checkpoint, "vtaco": self.checkpoint,
                "vtacoh": self.checkpoint},
            EVAL_GRID, num_points=128)

    def test_single_scene(self):
        report = self.evaluate()
        self.assertEqual(3, len(report.scores))
        self.assertEqual(
            ["vision-only", "vtaco", "vtacoh"], report.variants())
        first = report.scores[0]
        self.assertTrue(0 < first.iou < 1)
        self.assertTrue(math.isfinite(first.cd_x100))
        means = report.means("vision-only")
        self.assertEqual(1, means["count"])
        self.assertEqual(first.iou, means["iou"])
        self.assertEqual(first.cd_x100, means["cd_x100"])
        self.assertEqual(first.emd, means["emd"])
        # Tactile features do not reach the slab decoder
        for s in report.scores[1:]:
            self.assertEqual(first.row()[3:], s.row()[3:])

    def test_deterministic(self):
        a = self.evaluate()
        b = self.evaluate()
        self.assertEqual([s.row() for s in a.scores],
                         [s.row() for s in b.scores])

    def test_missing_scene_skipped(self):
        manifest = os.path.join(self.tmp.name, "data", "extra.jsonl")
        rows = datagen.read_manifest(self.manifest)
        rows.append(dict(rows[0], scene="gone", path="gone"))
        with open(manifest, "w") as f:
            for row in rows:
                f.write(json.dumps(row) + "\n")
        report = self.evaluate(manifest, vtaco=self.checkpoint)
        self.assertEqual(["gone"], report.missing)
        self.assertEqual(1, len(report.scores))

    def test_no_test_scenes(self):
        manifest = os.path.join(self.tmp.name, "data", "train.jsonl")
        rows = datagen.read_manifest(self.manifest)
        with open(manifest, "w") as f:
            f.write(json.dumps(dict(rows[0], split="train")) + "\n")
        with self.assertRaises(ValueError):
            self.evaluate(manifest, vtaco=self.checkpoint)

    def test_bad_checkpoints(self):
        with self.assertRaises(FileNotFoundError) as ctx:
            self.evaluate(vtaco=os.path.join(self.tmp.name, "none.vtc"))
        self.assertIn("vtaco", str(ctx.exception))
        with self.assertRaises(ValueError):
            self.evaluate(**{"tactile-only": self.checkpoint})


class TestIncrementalChamfer(unittest.TestCase):
    def test_grasp_counts(self):
        settings = DatagenSettings(
            grid=GRID, num_points=300, image_size=40, focal=50.0)
        dp = touching_datapoint(
            SceneSpec("sphere", resolution=2, cameras=4, grasps=2), 40,
            settings)
        curve = evaluation.incremental_chamfer(
            slab_model(), dp, 2, num_points=128)
        self.assertEqual(3, len(curve))
        self.assertTrue(np.all(np.isfinite(curve)))
        self.assertEqual(curve[0], curve[1])
        self.assertEqual(curve[0], curve[2])
        with self.assertRaises(ValueError):
            evaluation.incremental_chamfer(slab_model(), dp, -1)


class TestTactileBenefit(unittest.TestCase):
    def setUp(self) -> None:
        self.grid = VoxelGrid.cube((-0.6, -0.6, -0.6), 1.2, 24)
        self.model = touch_model(self.grid)
        self.dp = plane_datapoint(self.grid)

    def chamfer_to_truth(self, mesh: TriangleMesh) -> float:
        a = metrics.sample_mesh_points(mesh, 512, seed=1)
        b = metrics.sample_mesh_points(self.dp.mesh, 512, seed=1)
        return metrics.chamfer(a, b)

    def test_touch_beats_vision_only(self):
        vision = evaluation.variant_mesh(
            self.model, self.dp, "vision-only", grid_spec=self.grid)
        touch = evaluation.variant_mesh(
            self.model, self.dp, "vtaco", grid_spec=self.grid)
        np.testing.assert_allclose(0.0, vision.vertices[:, 0], atol=1e-6)
        self.assertGreater(np.max(touch.vertices[:, 0]), 0.2)
        self.assertLess(
            self.chamfer_to_truth(touch), self.chamfer_to_truth(vision))

    def test_more_grasps_do_not_hurt(self):
        curve = evaluation.incremental_chamfer(
            self.model, self.dp, 2, grid_spec=self.grid, num_points=512)
        self.assertEqual(3, len(curve))
        self.assertLessEqual(curve[1], curve[0])
        self.assertLessEqual(curve[2], curve[1])
        self.assertLess(curve[2], curve[0])


if __name__ == '__main__':
    unittest.main()
