"""Network building blocks with explicit forward and backward passes.

Parameters live in a flat dict of float64 arrays keyed "<block>.<name>".
Every forward returns its output and a cache; the matching backward takes
the cache and the gradient of the output, adds parameter gradients into a
grads dict and returns the gradient of the input.
"""

import itertools
from typing import Dict, List, Tuple

import numpy as np

Params = Dict[str, np.ndarray]


def init_uniform(
        rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def accumulate(grads: Params, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = np.array(value, dtype=np.float64)


class Mlp:
    """Dense layers with ReLU between them.

    With final_activation the last layer is followed by a ReLU as well.
    """

    def __init__(self, name: str, widths: List[int],
                 final_activation: bool = False):
        if len(widths) < 2:
            raise ValueError("MLP %s needs at least 2 widths" % name)
        self.name = name  # type: str
        self.widths = list(widths)  # type: List[int]
        self.final_activation = final_activation  # type: bool

    def __repr__(self):
        return "Mlp(%s, %s)" % (self.name, " -> ".join(
            str(w) for w in self.widths))

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    def param_shapes(self) -> List[Tuple[str, tuple]]:
        shapes = []
        for i, (a, b) in enumerate(zip(self.widths, self.widths[1:])):
            shapes.append(("%s.w%d" % (self.name, i), (a, b)))
            shapes.append(("%s.b%d" % (self.name, i), (b,)))
        return shapes

    def init(self, rng: np.random.Generator) -> Params:
        params = {}
        for i, (a, b) in enumerate(zip(self.widths, self.widths[1:])):
            params["%s.w%d" % (self.name, i)] = init_uniform(rng, a, (a, b))
            params["%s.b%d" % (self.name, i)] = init_uniform(rng, a, (b,))
        return params

    def _activated(self, i: int) -> bool:
        return i < self.num_layers - 1 or self.final_activation

    def forward(self, params: Params, x: np.ndarray):
        if x.shape[-1] != self.widths[0]:
            raise ValueError("%s expects %d inputs, got %d" % (
                self.name, self.widths[0], x.shape[-1]))
        cache = []
        for i in range(self.num_layers):
            pre = x @ params["%s.w%d" % (self.name, i)] + params[
                "%s.b%d" % (self.name, i)]
            cache.append((x, pre))
            x = np.maximum(pre, 0.0) if self._activated(i) else pre
        return x, cache

    def backward(self, params: Params, cache, grad: np.ndarray,
                 grads: Params) -> np.ndarray:
        for i in reversed(range(self.num_layers)):
            x, pre = cache[i]
            if self._activated(i):
                grad = grad * (pre > 0)
            w = "%s.w%d" % (self.name, i)
            accumulate(grads, w, x.T @ grad)
            accumulate(grads, "%s.b%d" % (self.name, i), grad.sum(axis=0))
            grad = grad @ params[w].T
        return grad


class Lattice:
    """Regular 2D or 3D cell lattice with a one-cell zero border.

    Cells are addressed by flat index into the padded lattice, first axis
    fastest, matching VoxelGrid's flat order on the interior.
    """

    PAD = 1

    def __init__(self, dims):
        self.dims = tuple(int(d) for d in dims)  # type: Tuple[int, ...]
        self.ndim = len(self.dims)  # type: int
        self.padded = tuple(d + 2 * self.PAD for d in self.dims)
        self.strides = np.cumprod((1,) + self.padded[:-1])
        self.size = int(np.prod(self.padded))  # type: int
        # Flat offsets of the 3^ndim neighbourhood
        self.offsets = np.array([
            int(np.dot(delta, self.strides))
            for delta in itertools.product((-1, 0, 1), repeat=self.ndim)])

    def __repr__(self):
        return "Lattice(%s)" % "x".join(str(d) for d in self.dims)

    def flat(self, cells: np.ndarray) -> np.ndarray:
        """Flat padded index of interior cell coordinates (N, ndim)."""
        return (np.asarray(cells, dtype=np.int64) + self.PAD) @ self.strides

    def coordinates(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        cells = np.empty((len(flat), self.ndim), dtype=np.int64)
        for axis in range(self.ndim):
            cells[:, axis] = (flat // self.strides[axis]) % self.padded[axis]
        return cells - self.PAD

    def interior(self, flat: np.ndarray) -> np.ndarray:
        cells = self.coordinates(flat)
        return np.all((cells >= 0) & (cells < np.array(self.dims)), axis=1)

    def cell_of(self, f: np.ndarray) -> np.ndarray:
        """Cell containing each continuous coordinate, clamped inside."""
        return np.clip(np.floor(f).astype(np.int64), 0,
                       np.array(self.dims) - 1)

    def to_array(self, dense: np.ndarray) -> np.ndarray:
        """(size, C) padded storage to an interior (*dims, C) array."""
        shaped = dense.reshape(self.padded + (dense.shape[1],), order="F")
        inner = tuple(slice(self.PAD, -self.PAD) for _ in self.dims)
        return shaped[inner]

    def interpolation(self, f: np.ndarray):
        """Multilinear weights between cell centers.

        f holds continuous coordinates in cell units, with cell i spanning
        [i, i + 1).  Coordinates beyond the outermost centers are clamped.
        Returns flat indices and weights, each (N, 2^ndim).
        """
        dims = np.array(self.dims)
        g = np.clip(f - 0.5, 0, dims - 1)
        i0 = np.minimum(np.floor(g).astype(np.int64), np.maximum(dims - 2, 0))
        t = g - i0
        i1 = np.minimum(i0 + 1, dims - 1)

        corners = 1 << self.ndim
        idx = np.empty((len(f), corners), dtype=np.int64)
        weights = np.empty((len(f), corners))
        for corner in range(corners):
            upper = np.array(
                [(corner >> a) & 1 for a in range(self.ndim)], dtype=bool)
            idx[:, corner] = self.flat(np.where(upper, i1, i0))
            weights[:, corner] = np.prod(np.where(upper, t, 1.0 - t), axis=1)
        return idx, weights


def mean_pool(lattice: Lattice, cells: np.ndarray, features: np.ndarray):
    """Average the features of points sharing a cell.

    cells must be sorted; empty cells stay zero.  Returns the dense padded
    (size, C) array, the occupied flat indices and the cache.
    """
    occupied, start, counts = np.unique(
        cells, return_index=True, return_counts=True)
    dense = np.zeros((lattice.size, features.shape[1]))
    if len(cells):
        dense[occupied] = np.add.reduceat(
            features, start, axis=0) / counts[:, None]
    return dense, occupied, (cells, occupied, counts)


def mean_pool_backward(cache, grad: np.ndarray) -> np.ndarray:
    cells, occupied, counts = cache
    per_cell = grad[occupied] / counts[:, None]
    return np.repeat(per_cell, counts, axis=0)


class SparseConv:
    """Bias-free 3^ndim convolution with zero padding.

    The output at cell p is sum_k x[p + offset_k] @ w[k].  Only the given
    active input cells may be nonzero, so work scales with their number;
    the output is nonzero at most on their interior neighbourhood.
    """

    def __init__(self, name: str, ndim: int, c_in: int, c_out: int,
                 activation: bool):
        self.name = name  # type: str
        self.ndim = ndim  # type: int
        self.c_in = c_in  # type: int
        self.c_out = c_out  # type: int
        self.activation = activation  # type: bool

    def __repr__(self):
        return "SparseConv(%s, %dD, %d -> %d)" % (
            self.name, self.ndim, self.c_in, self.c_out)

    @property
    def taps(self) -> int:
        return 3 ** self.ndim

    def param_shapes(self) -> List[Tuple[str, tuple]]:
        return [(self.name + ".w", (self.taps, self.c_in, self.c_out))]

    def init(self, rng: np.random.Generator) -> Params:
        return {self.name + ".w": init_uniform(
            rng, self.taps * self.c_in, (self.taps, self.c_in, self.c_out))}

    def forward(self, params: Params, lattice: Lattice, x: np.ndarray,
                active: np.ndarray):
        w = params[self.name + ".w"]
        out = np.zeros((lattice.size, self.c_out))
        inputs = x[active]
        for k, offset in enumerate(lattice.offsets):
            out[active - offset] += inputs @ w[k]

        touched = np.unique((active[:, None] - lattice.offsets).ravel())
        inside = lattice.interior(touched)
        out[touched[~inside]] = 0.0
        out_active = touched[inside]

        pre = out[out_active]
        if self.activation:
            out[out_active] = np.maximum(pre, 0.0)
        return out, out_active, (x, active, out_active, pre)

    def backward(self, params: Params, lattice: Lattice, cache,
                 grad: np.ndarray, grads: Params) -> np.ndarray:
        x, active, out_active, pre = cache
        w = params[self.name + ".w"]
        g = np.zeros((lattice.size, self.c_out))
        g[out_active] = grad[out_active]
        if self.activation:
            g[out_active] *= pre > 0

        inputs = x[active]
        grad_w = np.empty_like(w)
        grad_x = np.zeros((lattice.size, self.c_in))
        for k, offset in enumerate(lattice.offsets):
            g_k = g[active - offset]
            grad_w[k] = inputs.T @ g_k
            grad_x[active] += g_k @ w[k].T
        accumulate(grads, self.name + ".w", grad_w)
        return grad_x


def lookup(dense: np.ndarray, idx: np.ndarray,
           weights: np.ndarray) -> np.ndarray:
    """Interpolated features: sum over corners of weight * dense[idx]."""
    return np.einsum("nc,ncd->nd", weights, dense[idx])


def lookup_backward(size: int, idx: np.ndarray, weights: np.ndarray,
                    grad: np.ndarray) -> np.ndarray:
    out = np.zeros((size, grad.shape[1]))
    contributions = weights[:, :, None] * grad[:, None, :]
    np.add.at(out, idx.ravel(), contributions.reshape(-1, grad.shape[1]))
    return out


def l1_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean absolute error and its gradient (sign, 0 at 0) w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != np.shape(target):
        raise ValueError("Prediction shape %s does not match target %s" % (
            pred.shape, np.shape(target)))
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / pred.size
