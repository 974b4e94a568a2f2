"""Built-in oracle checks for the geometric and learning primitives.

Each check compares a primitive against an answer known independently of
it: analytic winding numbers, brute-force metrics, finite-difference
gradients and the fixed tip-to-sensor offset of the hand.  The overfit check
trains a model on one grasped sphere until it fits, then reconstructs it.
"""

import itertools
import time
from typing import Callable, List, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

import bvh
import config
import datagen
import hand
import marching
import metrics
import network
import recon
import shapes
import training
import winding
from geometry import PointCloud, RigidTransform, VoxelGrid
from grasp import NoTouchError
from hand import HandModel, HandPose
from log import Log
from network import Architecture, ReconModel, SceneInput
from optimizer import Adam
from queries import QueryBatch
from tactile import ContactPatch
from winding import Mode

GRADIENT_TOLERANCE = 1e-4

# A gradient deliberately scaled by this much must be caught
BROKEN_GRADIENT_SCALE = 1.5

OVERFIT_STEPS = 2000
OVERFIT_LOSS = 0.05
OVERFIT_IOU = 0.8
OVERFIT_LR = 1e-3
# Steps the loss is averaged over when testing for convergence
OVERFIT_WINDOW = 50


class CheckResult:
    def __init__(self, name: str, passed: bool, detail: str,
                 seconds: float = 0.0):
        self.name = name  # type: str
        self.passed = passed  # type: bool
        self.detail = detail  # type: str
        self.seconds = seconds  # type: float

    def __repr__(self):
        return "%s %s: %s" % (
            "PASS" if self.passed else "FAIL", self.name, self.detail)


def check_winding_analytic(threads: int = 1) -> Tuple[bool, str]:
    sphere = shapes.icosphere(1.0, 3)
    inside = winding.winding_number(sphere, (0, 0, 0))
    outside = winding.winding_number(sphere, (3, 0, 0))
    opening = winding.winding_number(shapes.hemisphere(), (0, 0, 0))
    ok = (abs(inside - 1) <= 1e-6 and abs(outside) <= 1e-6 and
          abs(opening - 0.5) <= 1e-9)
    return ok, "inside %.9f, outside %.2e, opening %.12f" % (
        inside, outside, opening)


def check_winding_accelerated(threads: int = 1) -> Tuple[bool, str]:
    """Error bound and speedup on one core, 50700 faces by 10^4 queries."""
    mesh = shapes.box((1.0, 1.0, 1.0), 65)
    tree = bvh.build_bvh(mesh)
    qs = np.random.default_rng(0).uniform(-2, 2, size=(10000, 3))
    seconds = {}
    values = {}
    for mode in Mode:
        winding.winding_number_batch(mesh, tree, qs[:2], mode)
        start = time.perf_counter()
        values[mode] = winding.winding_number_batch(mesh, tree, qs, mode)
        seconds[mode] = time.perf_counter() - start
    error = float(np.abs(values[Mode.EXACT] - values[Mode.ACCELERATED]).max())
    speedup = seconds[Mode.EXACT] / max(seconds[Mode.ACCELERATED], 1e-9)
    ok = error <= winding.ACCELERATED_ERROR_BOUND and speedup >= 5
    return ok, "max error %.2e over %d queries, %.0fx faster" % (
        error, len(qs), speedup)


def _gradient_batch(rng: np.random.Generator):
    cloud = PointCloud(rng.uniform(-0.5, 0.5, size=(40, 3)))
    scene = SceneInput(cloud, rng.uniform(0, 1, size=(2, 12)))
    n = 30
    return (scene, QueryBatch(
        rng.uniform(-0.6, 0.6, size=(n, 3)), rng.integers(-1, 2, size=n),
        rng.uniform(-0.5, 1.5, size=n)))


def _gradient_model(seed: int, broken_block: str = None) -> ReconModel:
    model = ReconModel(Architecture(
        VoxelGrid.cube((-0.6, -0.6, -0.6), 1.2, 6), d_p=4, d_t=4,
        point_hidden=5, tactile_shape=(3, 4), tactile_hidden=6,
        decoder_width=8), seed=seed)
    if broken_block is not None:
        original = model.decoder.backward

        def broken(params, cache, grad, grads):
            out = original(params, cache, grad, grads)
            grads[broken_block] *= BROKEN_GRADIENT_SCALE
            return out

        model.decoder.backward = broken
    return model


def gradient_errors(batches: int = 10, broken_block: str = None,
                    entries: int = 6) -> dict:
    """Worst relative gradient error per parameter block over batches."""
    worst = {}
    for i in range(batches):
        rng = np.random.default_rng(100 + i)
        model = _gradient_model(i, broken_block)
        batch = [_gradient_batch(rng)]
        for name, error in network.gradient_check(
                model, batch, entries=entries, seed=i).items():
            worst[name] = max(error, worst.get(name, 0.0))
    return worst


def check_gradients(threads: int = 1,
                    broken_block: str = None) -> Tuple[bool, str]:
    worst = gradient_errors(broken_block=broken_block)
    name = max(worst, key=worst.get)
    return worst[name] <= GRADIENT_TOLERANCE, \
        "worst block %s, relative error %.2e" % (name, worst[name])


def check_gradient_control(threads: int = 1) -> Tuple[bool, str]:
    """A deliberately wrong decoder gradient must fail the check."""
    worst = gradient_errors(batches=1, broken_block="decoder.w2",
                            entries=20)
    error = worst["decoder.w2"]
    return error > 1e-2, "broken decoder.w2 error %.2e" % error


def check_metrics(threads: int = 1) -> Tuple[bool, str]:
    rng = np.random.default_rng(1)
    a = rng.normal(size=(64, 3))
    b = rng.normal(size=(64, 3))
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    brute = 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())
    cd_error = abs(metrics.chamfer(a, b) - brute)

    a8 = rng.normal(size=(8, 3))
    b8 = rng.normal(size=(8, 3))
    d8 = np.linalg.norm(a8[:, None] - b8[None], axis=2)
    perms = np.array(list(itertools.permutations(range(8))))
    exhaustive = d8[np.arange(8), perms].mean(axis=1).min()
    emd_error = abs(metrics.emd(a8, b8) - exhaustive)

    grid = VoxelGrid.cube((-1, -1, -1), 2.0, 64)
    cube = shapes.box((1.0, 1.0, 1.0))
    iou = metrics.iou_volume(
        cube, cube.transformed(RigidTransform.from_translation((0.5, 0, 0))),
        grid, threads)
    ok = cd_error <= 1e-9 and emd_error <= 1e-9 and abs(iou - 1 / 3) <= 0.02
    return ok, "chamfer error %.1e, EMD error %.1e, half-cube IoU %.4f" % (
        cd_error, emd_error, iou)


def check_marching_sphere(threads: int = 1) -> Tuple[bool, str]:
    radius = 0.4
    grid = VoxelGrid.cube((-0.6, -0.6, -0.6), 1.2, 64)
    truth = shapes.icosphere(radius, 4)
    wnf = winding.evaluate_wnf_grid(
        truth, grid, Mode.ACCELERATED, threads=threads)
    mesh = marching.marching_cubes(wnf)
    if mesh.is_empty():
        return False, "empty mesh"
    r = np.linalg.norm(mesh.vertices, axis=1)
    deviation = float(np.abs(r - radius).max())
    iou = metrics.iou_volume(mesh, truth, grid, threads)
    ok = deviation <= 1.5 * grid.spacing and iou > 0.95
    return ok, "radius deviation %.4f (%.2f voxels), IoU %.4f" % (
        deviation, deviation / grid.spacing, iou)


def check_sensor_poses(threads: int = 1) -> Tuple[bool, str]:
    model = HandModel()
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        pose = HandPose(
            RigidTransform(Rotation.random(random_state=seed).as_matrix(),
                           rng.normal(size=3)),
            rng.uniform(-model.joint_limit, model.joint_limit,
                        size=(hand.NUM_FINGERS, hand.NUM_SEGMENTS, 3)))
        for f, sensor in enumerate(hand.sensor_poses(model, pose)):
            relative = hand.tip_frame(model, pose, f).inverse() @ sensor
            worst = max(worst, float(np.abs(
                relative.matrix() - model.tip_to_sensor[f].matrix()).max()))

    centers = np.random.default_rng(2).uniform(-0.5, 0.5, size=(20, 3))
    patches = [ContactPatch(PointCloud(centers[:10]), 0),
               ContactPatch(PointCloud(centers[10:]), 1)]
    samples = hand.sphere_query_positions(
        patches, hand.DEFAULT_QUERY_RADIUS, 2000, seed=3).points
    d = np.linalg.norm(samples[:, None] - centers[None], axis=2).min(axis=1)
    inside = float(np.mean(d <= hand.DEFAULT_QUERY_RADIUS))
    ok = worst < 1e-12 and inside == 1.0
    return ok, "tip-to-sensor deviation %.1e, %.1f%% samples in balls" % (
        worst, 100 * inside)


def overfit(
        steps: int = OVERFIT_STEPS, threads: int = 1, seed: int = 0,
        cfg: config.Config = None) -> Tuple[float, float, int]:
    """Fit one grasped sphere scene and reconstruct it on the same grid.

    Training stops early once the loss averaged over the last
    OVERFIT_WINDOW steps drops below OVERFIT_LOSS.  Returns that average,
    the IoU of the reconstruction with the scene mesh and the steps taken.
    """
    if steps < 1:
        raise ValueError("Overfitting needs at least one step: %d" % steps)
    cfg = cfg or config.Config()
    settings = cfg.datagen_settings(threads)
    spec = datagen.SceneSpec("sphere", grasps=1)
    for attempt in range(datagen.MAX_ATTEMPTS):
        try:
            dp = datagen.generate_datapoint(spec, seed + attempt, settings)
            break
        except NoTouchError as e:
            Log("Selftest", "%s, retrying" % e)
    else:
        raise NoTouchError(seed)

    scene = training.training_scene("overfit", dp)
    model = ReconModel(cfg.architecture(), seed=seed)
    train_cfg = config.TrainingConfig(
        lr=OVERFIT_LR, batch_size=1, seed=seed, log_every=200)
    adam = Adam(train_cfg.lr)
    losses = []
    while model.steps < steps:
        curve = training.train(
            model, [scene], train_cfg, cfg.sampling, adam,
            steps=min(OVERFIT_WINDOW, steps - model.steps), threads=threads)
        losses.extend(loss for _, loss in curve)
        if np.mean(losses[-OVERFIT_WINDOW:]) < OVERFIT_LOSS:
            break

    grid = cfg.grid.grid()
    mesh = recon.reconstruct(
        model, dp.cloud, dp.readings, grid, threads=threads)
    iou = metrics.iou_volume(mesh, dp.mesh, grid, threads)
    return float(np.mean(losses[-OVERFIT_WINDOW:])), iou, model.steps


def check_overfit(threads: int = 1) -> Tuple[bool, str]:
    loss, iou, steps = overfit(threads=threads)
    ok = loss < OVERFIT_LOSS and iou > OVERFIT_IOU
    return ok, "loss %.4f after %d steps, IoU %.4f" % (loss, steps, iou)


CHECKS = [
    ("winding-analytic", check_winding_analytic),
    ("winding-accelerated", check_winding_accelerated),
    ("gradients", check_gradients),
    ("gradient-control", check_gradient_control),
    ("metrics", check_metrics),
    ("marching-sphere", check_marching_sphere),
    ("sensor-poses", check_sensor_poses),
    ("overfit", check_overfit),
]  # type: List[Tuple[str, Callable[..., Tuple[bool, str]]]]


def run_selftest(threads: int = 1, checks=None) -> List[CheckResult]:
    """Run every check; an exception inside a check counts as a failure."""
    results = []
    for name, fn in checks or CHECKS:
        start = time.monotonic()
        try:
            passed, detail = fn(threads)
        except Exception as e:
            passed, detail = False, "%s: %s" % (type(e).__name__, e)
        result = CheckResult(name, bool(passed), detail,
                             time.monotonic() - start)
        Log("Selftest", "%r (%.1fs)" % (result, result.seconds))
        results.append(result)
    return results
