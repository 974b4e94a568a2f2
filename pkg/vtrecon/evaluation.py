"""Comparison of reconstruction variants on the test split.

Every test scene is reconstructed once per variant:

  vision-only  point cloud alone
  vtaco        point cloud and tactile readings at their recorded poses
  vtacoh       point cloud and tactile readings re-posed from the hand
               pose through forward kinematics, optionally perturbed

and scored against its ground-truth mesh with volume IoU, Chamfer distance
(x100) and EMD, the last two on 2048 surface points per mesh.  A
reconstruction without surface has IoU 0 and undefined (NaN) point
metrics; NaN values are left out of the means.
"""

import csv
import json
import math
import os
from collections import OrderedDict
from typing import Dict, List, Sequence, Tuple

import numpy as np

import checkpoint
import datagen
import hand
import metrics
import parallel
import recon
from config import VARIANTS
from datagen import DataPoint
from geometry import TriangleMesh, VoxelGrid
from log import Log, Progress
from mesh_io import FormatError
from network import ReconModel
from recon import SensorPoseMode
from tactile import DepthCalibration

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
COLUMNS = ("scene", "category", "variant", "iou", "cd_x100", "emd")
METRICS = ("iou", "cd_x100", "emd")


class SceneScore:
    def __init__(self, scene: str, category: str, variant: str,
                 iou: float, cd_x100: float, emd: float):
        self.scene = scene  # type: str
        self.category = category  # type: str
        self.variant = variant  # type: str
        self.iou = float(iou)  # type: float
        self.cd_x100 = float(cd_x100)  # type: float
        self.emd = float(emd)  # type: float

    def __repr__(self):
        return "SceneScore(%s, %s, IoU %.4f, CD %.4f, EMD %.4f)" % (
            self.scene, self.variant, self.iou, self.cd_x100, self.emd)

    def row(self) -> list:
        return [getattr(self, c) for c in COLUMNS]


def _mean(values: Sequence[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return math.nan
    return float(np.mean(finite))


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


class EvalReport:
    """Per-scene scores with per-variant and per-category means."""

    def __init__(self, scores: List[SceneScore] = None,
                 missing: List[str] = None):
        self.scores = list(scores or [])  # type: List[SceneScore]
        # Scenes listed in the manifest that could not be loaded
        self.missing = list(missing or [])  # type: List[str]

    def __repr__(self):
        return "EvalReport(%d scores, %d variants, %d missing)" % (
            len(self.scores), len(self.variants()), len(self.missing))

    def variants(self) -> List[str]:
        return list(OrderedDict.fromkeys(s.variant for s in self.scores))

    def categories(self, variant: str) -> List[str]:
        return sorted({s.category for s in self.scores
                       if s.variant == variant})

    def select(self, variant: str, category: str = None) -> List[SceneScore]:
        return [s for s in self.scores if s.variant == variant and (
            category is None or s.category == category)]

    def means(self, variant: str, category: str = None) -> Dict[str, float]:
        chosen = self.select(variant, category)
        out = OrderedDict(count=len(chosen))
        for m in METRICS:
            out[m] = _mean([getattr(s, m) for s in chosen])
        return out

    def to_dict(self) -> dict:
        variants = OrderedDict()
        for v in self.variants():
            entry = OrderedDict(
                (k, _json_value(x)) for k, x in self.means(v).items())
            entry["categories"] = OrderedDict(
                (c, OrderedDict((k, _json_value(x))
                                for k, x in self.means(v, c).items()))
                for c in self.categories(v))
            variants[v] = entry
        return {
            "variants": variants,
            "scenes": [OrderedDict(
                (c, _json_value(x)) for c, x in zip(COLUMNS, s.row()))
                for s in self.scores],
            "missing": self.missing,
        }

    def write(self, out_dir: str) -> Tuple[str, str]:
        """Write report.json and report.csv; returns their paths."""
        os.makedirs(out_dir, exist_ok=True)
        json_path = os.path.join(out_dir, REPORT_JSON)
        csv_path = os.path.join(out_dir, REPORT_CSV)
        with open(json_path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(COLUMNS)
            for s in self.scores:
                writer.writerow([
                    repr(x) if isinstance(x, float) else x for x in s.row()])
        return json_path, csv_path


def read_report_csv(path: str) -> List[SceneScore]:
    with open(path, newline="") as f:
        return [SceneScore(r["scene"], r["category"], r["variant"],
                           float(r["iou"]), float(r["cd_x100"]),
                           float(r["emd"])) for r in csv.DictReader(f)]


def score_mesh(
        predicted: TriangleMesh, truth: TriangleMesh, grid_spec: VoxelGrid,
        num_points: int = metrics.DEFAULT_EVAL_POINTS, seed: int = 0,
        threads: int = 1) -> Tuple[float, float, float]:
    """(IoU, Chamfer x100, EMD) of a reconstruction against ground truth."""
    iou = metrics.iou_volume(predicted, truth, grid_spec, threads)
    if predicted.is_empty():
        return iou, math.nan, math.nan
    a = metrics.sample_mesh_points(predicted, num_points, seed)
    b = metrics.sample_mesh_points(truth, num_points, seed)
    cd = metrics.CHAMFER_REPORT_SCALE * metrics.chamfer(a, b)
    return iou, cd, metrics.emd(a, b)


def variant_mesh(
        model: ReconModel, dp: DataPoint, variant: str,
        calibration: DepthCalibration = None,
        hand_model: hand.HandModel = None, grid_spec: VoxelGrid = None,
        pose_noise: float = 0.0, seed: int = 0,
        radius: float = hand.DEFAULT_QUERY_RADIUS,
        threads: int = 1) -> TriangleMesh:
    if variant == "vision-only":
        return recon.reconstruct(
            model, dp.cloud, (), grid_spec, calibration=calibration,
            radius=radius, threads=threads)
    if variant == "vtaco":
        return recon.reconstruct(
            model, dp.cloud, dp.readings, grid_spec,
            calibration=calibration, radius=radius, threads=threads)
    if variant == "vtacoh":
        return recon.reconstruct(
            model, dp.cloud, dp.readings, grid_spec, SensorPoseMode.HAND,
            hand_model, dp.hand_poses, pose_noise, seed, calibration,
            radius, threads)
    raise ValueError("Unknown variant %r" % variant)


def _load_checkpoints(
        checkpoints: Dict[str, str]
) -> Dict[str, Tuple[ReconModel, DepthCalibration]]:
    if not checkpoints:
        raise ValueError("No checkpoints to evaluate")
    loaded = OrderedDict()
    for variant, path in checkpoints.items():
        if variant not in VARIANTS:
            raise ValueError("Unknown variant %r (expected one of %s)" % (
                variant, ", ".join(VARIANTS)))
        if not os.path.exists(path):
            raise FileNotFoundError(
                "Checkpoint for variant %s not found: %s" % (variant, path))
        model, calibration = checkpoint.read_checkpoint(path)
        recon.check_trained(model)
        loaded[variant] = (model, calibration)
    return loaded


def evaluate_variants(
        manifest_path: str, checkpoints: Dict[str, str],
        grid_spec: VoxelGrid = None, recon_grid: VoxelGrid = None,
        num_points: int = metrics.DEFAULT_EVAL_POINTS,
        pose_noise: float = 0.0, seed: int = 0,
        radius: float = hand.DEFAULT_QUERY_RADIUS,
        threads: int = 1) -> EvalReport:
    """Reconstruct and score every test scene with every variant.

    checkpoints maps a variant name to its checkpoint path.  grid_spec is
    the IoU grid (64^3 over the scene cube by default); recon_grid the
    reconstruction grid (each model's feature grid by default).
    """
    if grid_spec is None:
        grid_spec = VoxelGrid.cube((-0.6, -0.6, -0.6), 1.2, 64)
    models = _load_checkpoints(checkpoints)

    rows = [r for r in datagen.read_manifest(manifest_path)
            if r["split"] == "test"]
    if not rows:
        raise ValueError("No test scenes in %s" % manifest_path)

    missing = []
    scenes = []
    for i, row in enumerate(rows):
        path = datagen.scene_path(manifest_path, row)
        try:
            dp = datagen.load_datapoint(path)
            hand_model = datagen.load_hand_model(path)
        except (OSError, FormatError, ValueError, KeyError) as e:
            Log("Eval", "skipping scene %s: %s" % (row["scene"], e))
            missing.append(row["scene"])
            continue
        scenes.append((i, row, dp, hand_model))
    if not scenes:
        raise ValueError("None of the %d test scenes could be loaded" % (
            len(rows)))

    jobs = [(variant, scene) for variant in models for scene in scenes]
    progress = Progress(len(jobs))

    def _score(job) -> SceneScore:
        variant, (i, row, dp, hand_model) = job
        model, calibration = models[variant]
        mesh = variant_mesh(
            model, dp, variant, calibration, hand_model, recon_grid,
            pose_noise, seed + i, radius)
        iou, cd, emd = score_mesh(mesh, dp.mesh, grid_spec, num_points,
                                  seed + i)
        progress.advance()
        return SceneScore(row["scene"], row["category"], variant, iou, cd,
                          emd)

    report = EvalReport(parallel.map_ordered(_score, jobs, threads), missing)
    progress.done()
    for variant in report.variants():
        m = report.means(variant)
        Log("Eval", "%s over %d scenes: IoU %.4f, CD %.4f, EMD %.4f" % (
            variant, m["count"], m["iou"], m["cd_x100"], m["emd"]))
    return report


def incremental_chamfer(
        model: ReconModel, dp: DataPoint, max_grasps: int,
        calibration: DepthCalibration = None, grid_spec: VoxelGrid = None,
        num_points: int = metrics.DEFAULT_EVAL_POINTS, seed: int = 0,
        radius: float = hand.DEFAULT_QUERY_RADIUS,
        threads: int = 1) -> List[float]:
    """Chamfer x100 using the readings of the first 0, 1, ... grasps.

    The same model serves every grasp count.
    """
    if max_grasps < 0:
        raise ValueError("Grasp count must be non-negative: %d" % max_grasps)
    truth = metrics.sample_mesh_points(dp.mesh, num_points, seed)
    out = []
    for k in range(max_grasps + 1):
        mesh = recon.reconstruct(
            model, dp.cloud, dp.readings_upto(k), grid_spec,
            calibration=calibration, radius=radius, threads=threads)
        if mesh.is_empty():
            out.append(math.nan)
            continue
        points = metrics.sample_mesh_points(mesh, num_points, seed)
        out.append(metrics.CHAMFER_REPORT_SCALE * metrics.chamfer(
            points, truth))
    return out
