"""Training loop for the reconstruction model.

Each step draws a minibatch of scenes from a shuffled epoch order, samples
a fresh query batch per scene, and takes one Adam step on the mean L1 loss
over all queries of the minibatch.  Randomness comes from a generator
seeded with (seed, step), so a resumed run repeats the steps an
uninterrupted run would have taken.
"""

import csv
import os
from typing import List, Sequence, Tuple

import numpy as np

import bvh as bvh_module
import datagen
import network
import queries
import recon
import tactile
from config import SamplingConfig, TrainingConfig
from datagen import DataPoint
from geometry import TriangleMesh
from log import Log, Progress
from network import ReconModel, SceneInput
from optimizer import Adam
from tactile import ContactPatch, DepthCalibration, TactileSensorSpec
from winding import WnfGrid


class DivergenceError(Exception):
    """Raised when the training loss stops being finite."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss

    def __str__(self):
        return "Training diverged at step %d: loss %r" % (
            self.step, self.loss)


class TrainingScene:
    def __init__(
            self, name: str, category: str, scene: SceneInput,
            patches: List[ContactPatch], mesh: TriangleMesh,
            target: WnfGrid):
        self.name = name  # type: str
        self.category = category  # type: str
        self.scene = scene  # type: SceneInput
        self.patches = patches  # type: List[ContactPatch]
        self.mesh = mesh  # type: TriangleMesh
        self.tree = bvh_module.build_bvh(mesh)  # type: bvh_module.Bvh
        # Grid interpolated for ground truth; None for exact winding numbers
        # of mesh
        self.target = target  # type: WnfGrid

    def __repr__(self):
        return "TrainingScene(%s, %s, %d readings)" % (
            self.name, self.category, self.scene.num_readings)


def variant_readings(dp: DataPoint, variant: str, hand_model=None):
    """The readings a variant sees; vtacoh re-poses them from the hand."""
    if variant == "vision-only":
        return []
    if variant == "vtacoh":
        return recon.hand_mode_readings(
            dp.readings, hand_model, dp.hand_poses)
    if variant == "vtaco":
        return list(dp.readings)
    raise ValueError("Unknown variant %r" % variant)


def training_scene(
        name: str, dp: DataPoint, variant: str = "vtaco",
        target: str = "deformed", calibration: DepthCalibration = None,
        hand_model=None) -> TrainingScene:
    """A scene ready for training.

    The deformed channel is the stored mesh, so its ground truth is exact.
    The undeformed mesh is not stored; that channel interpolates its grid.
    """
    readings = variant_readings(dp, variant, hand_model)
    scene, patches = recon.scene_input(dp.cloud, readings, calibration)
    grid = dp.target(target)
    if target == "deformed" or grid is dp.wnf:
        grid = None
    return TrainingScene(
        name, dp.meta.get("category", ""), scene, patches, dp.mesh, grid)


def fit_calibration(
        datapoints: Sequence[DataPoint],
        spec: TactileSensorSpec = None) -> DepthCalibration:
    """Fit the tactile depth calibration on ground-truth gel depths.

    Readings without contact pixels are skipped.  Falls back to the
    sensor's nominal calibration when fewer than two readings remain.
    """
    readings = []
    meshes = []
    for dp in datapoints:
        readings.extend(dp.readings)
        meshes.extend([dp.mesh] * len(dp.readings))
    if spec is None:
        spec = readings[0].spec if readings else TactileSensorSpec()
    pairs = [
        (image, depth)
        for image, depth in tactile.calibration_pairs(readings, meshes)
        if tactile.contact_pixels(image, depth).any()]
    if len(pairs) < 2:
        Log("Training", "%d of %d readings touch, using nominal calibration"
            % (len(pairs), len(readings)))
        return DepthCalibration.from_spec(spec)
    calibration = tactile.train_depth_net(pairs)
    Log("Training", "fitted %r on %d of %d readings" % (
        calibration, len(pairs), len(readings)))
    return calibration


def load_split(
        manifest_path: str, split: str = "train", category: str = ""
) -> List[Tuple[dict, DataPoint]]:
    """(manifest row, data point) for every scene of a split."""
    rows = [r for r in datagen.read_manifest(manifest_path)
            if r["split"] == split and (
                not category or r["category"] == category)]
    return [(row, datagen.load_datapoint(
        datagen.scene_path(manifest_path, row))) for row in rows]


def load_training_scenes(
        manifest_path: str, variant: str = "vtaco",
        target: str = "deformed", category: str = "",
        calibration: DepthCalibration = None
) -> Tuple[List[TrainingScene], DepthCalibration]:
    """Training scenes of a manifest, and the calibration they use.

    The calibration is fitted on the training split unless given.
    """
    loaded = load_split(manifest_path, "train", category)
    if not loaded:
        raise ValueError("No training scenes in %s%s" % (
            manifest_path, " for category %r" % category if category else ""))
    if calibration is None:
        calibration = fit_calibration([dp for _, dp in loaded])
    scenes = []
    for row, dp in loaded:
        hand_model = None
        if variant == "vtacoh":
            hand_model = datagen.load_hand_model(
                datagen.scene_path(manifest_path, row))
        scenes.append(training_scene(
            row["path"], dp, variant, target, calibration, hand_model))
    return scenes, calibration


def write_loss_curve(path: str, curve: Sequence[Tuple[int, float]],
                     append: bool = False) -> None:
    """CSV with columns step, loss; append adds rows without a header."""
    write_header = not (append and os.path.exists(path))
    with open(path, "a" if append else "w", newline="") as f:
        writer = csv.writer(f)
        if write_header:
            writer.writerow(["step", "loss"])
        for step, loss in curve:
            writer.writerow([step, repr(float(loss))])


def read_loss_curve(path: str) -> List[Tuple[int, float]]:
    with open(path, newline="") as f:
        return [(int(row["step"]), float(row["loss"]))
                for row in csv.DictReader(f)]


def train(
        model: ReconModel, scenes: Sequence[TrainingScene],
        cfg: TrainingConfig = None, sampling: SamplingConfig = None,
        adam: Adam = None, steps: int = None, threads: int = 1
) -> List[Tuple[int, float]]:
    """Train model in place for steps (default cfg.steps) more steps.

    Returns the loss curve as (step, loss) with step counted from the
    model's previous step count.  Raises DivergenceError on a non-finite
    loss.
    """
    cfg = cfg or TrainingConfig()
    sampling = sampling or SamplingConfig()
    if not scenes:
        raise ValueError("Cannot train on an empty dataset")
    if adam is None:
        adam = Adam(cfg.lr)
    steps = cfg.steps if steps is None else steps
    batch_size = min(cfg.batch_size, len(scenes))
    bounds = model.arch.feature_grid

    curve = []
    progress = Progress(steps, every=max(1, cfg.log_every // 5))
    for _ in range(steps):
        step = model.steps
        rng = np.random.default_rng([cfg.seed, step])
        # Epoch order is fixed per epoch; the step picks its slice of it
        epoch, offset = divmod(step * batch_size, len(scenes))
        order = np.random.default_rng([cfg.seed, epoch]).permutation(
            len(scenes))
        picks = np.concatenate([order, np.random.default_rng(
            [cfg.seed, epoch + 1]).permutation(len(scenes))])[
                offset:offset + batch_size]

        batch = []
        for i in picks:
            s = scenes[i]
            batch.append((s.scene, queries.sample_query_batch(
                s.mesh, s.patches, int(rng.integers(2 ** 31)), bounds,
                s.target, sampling.queries, sampling.pool,
                sampling.surface, sampling.radius, s.tree, threads)))

        loss, grads = network.loss_and_gradients(model, batch)
        if not np.isfinite(loss) or not all(
                np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError(step, loss)
        adam.step(model.params, grads)
        model.steps += 1
        curve.append((model.steps, loss))
        if model.steps % cfg.log_every == 0:
            Log("Training", "step %d: loss %.5f" % (model.steps, loss))
        progress.advance()
    progress.done()
    return curve
