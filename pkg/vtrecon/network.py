"""Winding number reconstruction network.

    visual:  per-point MLP -> mean pool into a feature lattice -> two
             sparse 3x3x3 convolutions (or three 2D planes, each with two
             3x3 convolutions) -> interpolated feature F_p at a query
    tactile: MLP over the flattened indentation image of a reading -> F_t
    fusion:  [x, F_p + F_t] (addition) or [x, F_p, F_t] (concat), with x
             the query position normalized to the feature grid's cube
    decoder: 5 dense layers, unbounded scalar output
"""

import enum
from collections import OrderedDict
from typing import Dict, List, Tuple

import numpy as np

import layers
import tactile
from geometry import PointCloud, VoxelGrid
from layers import Lattice, Mlp, SparseConv
from tactile import DepthCalibration, TactileReading


class Fusion(enum.Enum):
    ADDITION = "addition"
    CONCAT = "concat"


class EncoderKind(enum.Enum):
    VOLUME = "volume"
    MULTIPLANE = "multiplane"


# (drop axis, kept axes) for the xy, xz and yz planes
PLANES = ((2, (0, 1)), (1, (0, 2)), (0, (1, 2)))


class Architecture:
    def __init__(
            self, feature_grid: VoxelGrid = None, d_p: int = 32,
            d_t: int = 32, point_hidden: int = 32,
            tactile_shape: Tuple[int, int] = (40, 60),
            tactile_hidden: int = 64, decoder_width: int = 128,
            decoder_layers: int = 5, fusion: Fusion = Fusion.ADDITION,
            encoder: EncoderKind = EncoderKind.VOLUME,
            plane_resolution: int = None):
        if feature_grid is None:
            feature_grid = VoxelGrid.cube((-0.6, -0.6, -0.6), 1.2, 32)
        if len(set(feature_grid.dims)) != 1:
            raise ValueError(
                "Feature grid must be a cube, got dims %s" % (
                    feature_grid.dims,))
        fusion = Fusion(fusion)
        if fusion == Fusion.ADDITION and d_p != d_t:
            raise ValueError(
                "Addition fusion needs d_p == d_t, got %d and %d" % (
                    d_p, d_t))
        if decoder_layers < 2:
            raise ValueError("Decoder needs at least 2 layers")

        self.feature_grid = feature_grid.spec()  # type: VoxelGrid
        self.d_p = d_p  # type: int
        self.d_t = d_t  # type: int
        self.point_hidden = point_hidden  # type: int
        self.tactile_shape = tuple(tactile_shape)  # type: Tuple[int, int]
        self.tactile_hidden = tactile_hidden  # type: int
        self.decoder_width = decoder_width  # type: int
        self.decoder_layers = decoder_layers  # type: int
        self.fusion = fusion  # type: Fusion
        self.encoder = EncoderKind(encoder)  # type: EncoderKind
        self.plane_resolution = int(
            plane_resolution or feature_grid.dims[0])  # type: int

    def __repr__(self):
        return "Architecture(%s, %s, D=%d, d=%d)" % (
            self.encoder.value, self.fusion.value,
            self.feature_grid.dims[0], self.fused_dim)

    @property
    def fused_dim(self) -> int:
        if self.fusion == Fusion.ADDITION:
            return 3 + self.d_p
        return 3 + self.d_p + self.d_t

    @property
    def tactile_size(self) -> int:
        return self.tactile_shape[0] * self.tactile_shape[1]

    def to_dict(self) -> dict:
        grid = self.feature_grid
        return {
            "grid_origin": grid.origin.tolist(),
            "grid_spacing": grid.spacing,
            "grid_dims": list(grid.dims),
            "d_p": self.d_p,
            "d_t": self.d_t,
            "point_hidden": self.point_hidden,
            "tactile_shape": list(self.tactile_shape),
            "tactile_hidden": self.tactile_hidden,
            "decoder_width": self.decoder_width,
            "decoder_layers": self.decoder_layers,
            "fusion": self.fusion.value,
            "encoder": self.encoder.value,
            "plane_resolution": self.plane_resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        grid = VoxelGrid(d["grid_origin"], d["grid_spacing"], d["grid_dims"])
        return cls(
            grid, d["d_p"], d["d_t"], d["point_hidden"],
            tuple(d["tactile_shape"]), d["tactile_hidden"],
            d["decoder_width"], d["decoder_layers"], Fusion(d["fusion"]),
            EncoderKind(d["encoder"]), d["plane_resolution"])


class SceneInput:
    """Network inputs shared by all queries of one scene."""

    def __init__(self, cloud: PointCloud, tactile_inputs: np.ndarray = None):
        if cloud.is_empty():
            raise ValueError("Cannot encode an empty point cloud")
        self.cloud = cloud  # type: PointCloud
        if tactile_inputs is None:
            tactile_inputs = np.zeros((0, 0))
        self.tactile_inputs = np.asarray(
            tactile_inputs, dtype=np.float64)  # type: np.ndarray

    def __repr__(self):
        return "SceneInput(%d points, %d readings)" % (
            len(self.cloud), self.num_readings)

    @property
    def num_readings(self) -> int:
        return len(self.tactile_inputs)


def tactile_input(
        reading: TactileReading,
        calibration: DepthCalibration = None) -> np.ndarray:
    """Flattened indentation of a reading in [0, 1], zero off contact."""
    spec = reading.spec
    depth = tactile.tactile_depth(reading, calibration).values
    indentation = (spec.rest_depth - depth) / spec.max_indentation
    return np.nan_to_num(indentation, nan=0.0).ravel()


class VisualFeatures:
    """Encoded point cloud: padded dense feature storage per lattice."""

    def __init__(self, lattices: List[Lattice], dense: List[np.ndarray],
                 cache):
        self.lattices = lattices  # type: List[Lattice]
        self.dense = dense  # type: List[np.ndarray]
        self.cache = cache


class ReconModel:
    def __init__(self, arch: Architecture = None, params=None,
                 seed: int = 0, steps: int = 0):
        self.arch = arch or Architecture()  # type: Architecture
        a = self.arch
        self.point_mlp = Mlp(
            "point", [3, a.point_hidden, a.d_p], final_activation=True)
        ndim = 3 if a.encoder == EncoderKind.VOLUME else 2
        self.convs = [
            SparseConv("conv0", ndim, a.d_p, a.d_p, activation=True),
            SparseConv("conv1", ndim, a.d_p, a.d_p, activation=False)]
        self.tactile_mlp = Mlp(
            "tactile", [a.tactile_size, a.tactile_hidden, a.d_t])
        self.decoder = Mlp(
            "decoder", [a.fused_dim] + [a.decoder_width] * (
                a.decoder_layers - 1) + [1])
        if a.encoder == EncoderKind.VOLUME:
            self.lattices = [Lattice(a.feature_grid.dims)]
        else:
            r = a.plane_resolution
            self.lattices = [Lattice((r, r)) for _ in PLANES]

        shapes = self.param_shapes()
        if params is None:
            rng = np.random.default_rng(seed)
            params = OrderedDict()
            for block in self._blocks():
                params.update(block.init(rng))
        params = OrderedDict(
            (name, np.array(params[name], dtype=np.float64))
            for name, _ in shapes)
        for name, shape in shapes:
            if params[name].shape != shape:
                raise ValueError("Parameter %s has shape %s, expected %s" % (
                    name, params[name].shape, shape))
        self.params = params  # type: Dict[str, np.ndarray]
        # Optimizer steps taken so far
        self.steps = steps  # type: int

    def __repr__(self):
        return "ReconModel(%r, %d parameters, %d steps)" % (
            self.arch, self.parameter_count(), self.steps)

    def _blocks(self):
        return [self.point_mlp] + self.convs + [
            self.tactile_mlp, self.decoder]

    def param_shapes(self) -> List[Tuple[str, tuple]]:
        shapes = []
        for block in self._blocks():
            shapes.extend(block.param_shapes())
        return shapes

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params.values())

    def copy(self) -> "ReconModel":
        return ReconModel(self.arch, self.params, steps=self.steps)

    # Visual encoder

    def normalized(self, positions: np.ndarray) -> np.ndarray:
        lo, hi = self.arch.feature_grid.bounds()
        return (positions - 0.5 * (lo + hi)) / (hi - lo)

    def _cell_coordinates(self, positions: np.ndarray) -> List[np.ndarray]:
        """Continuous cell coordinates of positions in each lattice."""
        grid = self.arch.feature_grid
        f = (positions - grid.origin) / grid.spacing
        if self.arch.encoder == EncoderKind.VOLUME:
            return [f]
        scale = self.arch.plane_resolution / grid.dims[0]
        return [f[:, kept] * scale for _, kept in PLANES]

    def encode(self, cloud: PointCloud) -> VisualFeatures:
        if cloud.is_empty():
            raise ValueError("Cannot encode an empty point cloud")
        points = cloud.points
        dense = []
        caches = []
        for lattice, f in zip(self.lattices,
                              self._cell_coordinates(points)):
            cells = lattice.flat(lattice.cell_of(f))
            # Canonical order makes pooling independent of input order
            order = np.lexsort(
                (points[:, 2], points[:, 1], points[:, 0], cells))
            feats, mlp_cache = self.point_mlp.forward(
                self.params, points[order])
            x, active, pool_cache = layers.mean_pool(
                lattice, cells[order], feats)
            conv_caches = []
            for conv in self.convs:
                x, active, conv_cache = conv.forward(
                    self.params, lattice, x, active)
                conv_caches.append(conv_cache)
            dense.append(x)
            caches.append((mlp_cache, pool_cache, conv_caches))
        return VisualFeatures(self.lattices, dense, caches)

    def _encode_backward(self, vis: VisualFeatures, grads_dense, grads):
        for lattice, grad, (mlp_cache, pool_cache, conv_caches) in zip(
                vis.lattices, grads_dense, vis.cache):
            for conv, conv_cache in reversed(
                    list(zip(self.convs, conv_caches))):
                grad = conv.backward(
                    self.params, lattice, conv_cache, grad, grads)
            grad_feats = layers.mean_pool_backward(pool_cache, grad)
            self.point_mlp.backward(
                self.params, mlp_cache, grad_feats, grads)

    def visual_at(self, vis: VisualFeatures, positions: np.ndarray):
        """F_p at each position: sum of interpolated lattice features."""
        out = np.zeros((len(positions), self.arch.d_p))
        cache = []
        for lattice, dense, f in zip(
                vis.lattices, vis.dense, self._cell_coordinates(positions)):
            idx, weights = lattice.interpolation(f)
            out += layers.lookup(dense, idx, weights)
            cache.append((idx, weights))
        return out, cache

    def feature_volume(self, vis: VisualFeatures) -> List[np.ndarray]:
        """Interior feature arrays, (D, D, D, d_p) or three (R, R, d_p)."""
        return [lattice.to_array(dense)
                for lattice, dense in zip(vis.lattices, vis.dense)]

    # Tactile encoder and decoder

    def encode_tactile(self, tactile_inputs: np.ndarray):
        if len(tactile_inputs) == 0:
            return np.zeros((0, self.arch.d_t)), None
        return self.tactile_mlp.forward(self.params, tactile_inputs)

    def tactile_slots(
            self, features: np.ndarray,
            tactile_index: np.ndarray) -> np.ndarray:
        """Per-query F_t; zero where tactile_index is -1."""
        slots = np.zeros((len(tactile_index), self.arch.d_t))
        with_touch = tactile_index >= 0
        slots[with_touch] = features[tactile_index[with_touch]]
        return slots

    def decode(self, fused: np.ndarray):
        out, cache = self.decoder.forward(self.params, fused)
        return out[:, 0], cache

    # Whole network

    def forward(self, scene: SceneInput, positions: np.ndarray,
                tactile_index: np.ndarray):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        tactile_index = np.asarray(tactile_index, dtype=np.int64)
        if tactile_index.max(initial=-1) >= scene.num_readings:
            raise ValueError("Tactile index refers to a missing reading")
        vis = self.encode(scene.cloud)
        f_p, lookup_cache = self.visual_at(vis, positions)
        f_t_all, tactile_cache = self.encode_tactile(scene.tactile_inputs)
        f_t = self.tactile_slots(f_t_all, tactile_index)
        fused = fuse(
            self.normalized(positions), f_p, f_t, self.arch.fusion)
        pred, decoder_cache = self.decode(fused)
        cache = (vis, lookup_cache, tactile_cache, tactile_index,
                 len(f_t_all), decoder_cache)
        return pred, cache

    def backward(self, cache, grad_pred: np.ndarray,
                 grads: Dict[str, np.ndarray] = None):
        """Accumulate parameter gradients for d(loss)/d(pred) = grad_pred."""
        if grads is None:
            grads = OrderedDict(
                (name, np.zeros_like(p)) for name, p in self.params.items())
        vis, lookup_cache, tactile_cache, tactile_index, num_readings, \
            decoder_cache = cache

        grad_fused = self.decoder.backward(
            self.params, decoder_cache, grad_pred[:, None], grads)
        grad_p, grad_t = split_fused(
            grad_fused, self.arch.d_p, self.arch.fusion)

        if num_readings:
            with_touch = tactile_index >= 0
            grad_all = np.zeros((num_readings, self.arch.d_t))
            np.add.at(grad_all, tactile_index[with_touch],
                      grad_t[with_touch])
            self.tactile_mlp.backward(
                self.params, tactile_cache, grad_all, grads)

        grads_dense = [
            layers.lookup_backward(lattice.size, idx, weights, grad_p)
            for lattice, (idx, weights) in zip(vis.lattices, lookup_cache)]
        self._encode_backward(vis, grads_dense, grads)
        return grads

    def predict(self, scene: SceneInput, positions: np.ndarray,
                tactile_index: np.ndarray, chunk_size: int = 8192,
                vis: VisualFeatures = None) -> np.ndarray:
        """Decoder output at many positions, without gradient bookkeeping."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        tactile_index = np.asarray(tactile_index, dtype=np.int64)
        if vis is None:
            vis = self.encode(scene.cloud)
        f_t_all, _ = self.encode_tactile(scene.tactile_inputs)
        out = np.empty(len(positions))
        for lo in range(0, len(positions), chunk_size):
            hi = min(lo + chunk_size, len(positions))
            f_p, _ = self.visual_at(vis, positions[lo:hi])
            f_t = self.tactile_slots(f_t_all, tactile_index[lo:hi])
            fused = fuse(self.normalized(positions[lo:hi]), f_p, f_t,
                         self.arch.fusion)
            out[lo:hi], _ = self.decode(fused)
        return out


def encode_visual(model: ReconModel, cloud: PointCloud) -> VoxelGrid:
    """Feature volume of a point cloud on the model's feature grid."""
    if model.arch.encoder != EncoderKind.VOLUME:
        raise ValueError("Model uses the %s encoder" % (
            model.arch.encoder.value))
    vis = model.encode(cloud)
    return model.arch.feature_grid.with_data(model.feature_volume(vis)[0])


def encode_visual_multiplane(
        model: ReconModel, cloud: PointCloud) -> List[np.ndarray]:
    """Three (R, R, d_p) plane feature maps (xy, xz, yz)."""
    if model.arch.encoder != EncoderKind.MULTIPLANE:
        raise ValueError("Model uses the %s encoder" % (
            model.arch.encoder.value))
    return model.feature_volume(model.encode(cloud))


def fuse(x: np.ndarray, f_p: np.ndarray, f_t: np.ndarray,
         mode: Fusion) -> np.ndarray:
    mode = Fusion(mode)
    if mode == Fusion.ADDITION:
        if f_p.shape != f_t.shape:
            raise ValueError(
                "Addition fusion needs equal feature sizes, got %s and %s" % (
                    f_p.shape[1:], f_t.shape[1:]))
        return np.concatenate([x, f_p + f_t], axis=1)
    return np.concatenate([x, f_p, f_t], axis=1)


def split_fused(grad: np.ndarray, d_p: int, mode: Fusion):
    """Gradients of F_p and F_t from the gradient of the fused feature."""
    if Fusion(mode) == Fusion.ADDITION:
        return grad[:, 3:], grad[:, 3:]
    return grad[:, 3:3 + d_p], grad[:, 3 + d_p:]


def decode_wnf(model: ReconModel, fused: np.ndarray) -> np.ndarray:
    return model.decode(np.asarray(fused, dtype=np.float64))[0]


def wnf_loss(pred, target) -> float:
    return layers.l1_loss(pred, target)[0]


def loss_and_gradients(model: ReconModel, batch):
    """Mean L1 loss over all queries of a list of (SceneInput, QueryBatch)
    pairs, and its gradient for every parameter."""
    total = sum(len(b.positions) for _, b in batch)
    grads = OrderedDict(
        (name, np.zeros_like(p)) for name, p in model.params.items())
    loss = 0.0
    for scene, queries in batch:
        pred, cache = model.forward(
            scene, queries.positions, queries.tactile_index)
        diff = pred - queries.gt
        loss += float(np.abs(diff).sum())
        model.backward(cache, np.sign(diff) / total, grads)
    return loss / max(total, 1), grads


def gradient_check(
        model: ReconModel, batch, entries: int = 6, h: float = 1e-5,
        seed: int = 0) -> Dict[str, float]:
    """Relative error between analytic and central-difference gradients.

    For each parameter block a few random entries are perturbed; the error
    is |g_analytic - g_numeric| / (|g_analytic| + |g_numeric|) over them.
    """
    _, grads = loss_and_gradients(model, batch)
    rng = np.random.default_rng(seed)
    errors = OrderedDict()
    for name, param in model.params.items():
        flat = param.reshape(-1)
        picks = rng.choice(flat.size, size=min(entries, flat.size),
                           replace=False)
        analytic = grads[name].reshape(-1)[picks]
        numeric = np.empty(len(picks))
        for i, j in enumerate(picks):
            saved = flat[j]
            flat[j] = saved + h
            plus, _ = loss_and_gradients(model, batch)
            flat[j] = saved - h
            minus, _ = loss_and_gradients(model, batch)
            flat[j] = saved
            numeric[i] = (plus - minus) / (2 * h)
        scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        errors[name] = 0.0 if scale == 0 else float(
            np.linalg.norm(analytic - numeric) / scale)
    return errors
