"""Model checkpoints.

  VTC1  magic, descriptor length (u32), UTF-8 JSON descriptor, then the
        parameter blocks as little-endian f32 in descriptor order.

The descriptor holds the architecture, the step count, the tactile depth
calibration and a (name, shape) entry per block.  Adam moment estimates are
stored as extra blocks named "adam.m.<param>" and "adam.v.<param>".
"""

import json
import struct
from collections import OrderedDict
from typing import Tuple

import numpy as np

from mesh_io import FormatError
from network import Architecture, ReconModel
from optimizer import Adam
from tactile import DepthCalibration

MAGIC = b"VTC1"
HEADER = struct.Struct("<4sI")
VERSION = 1


def write_checkpoint(
        path: str, model: ReconModel, adam: Adam = None,
        calibration: DepthCalibration = None) -> None:
    blocks = OrderedDict(model.params)
    if adam is not None:
        for name in model.params:
            if name in adam.m:
                blocks["adam.m." + name] = adam.m[name]
                blocks["adam.v." + name] = adam.v[name]

    descriptor = {
        "version": VERSION,
        "architecture": model.arch.to_dict(),
        "steps": model.steps,
        "adam_t": adam.t if adam is not None else 0,
        "calibration": (
            calibration.to_dict() if calibration is not None else None),
        "blocks": [[name, list(a.shape)] for name, a in blocks.items()],
    }
    text = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, len(text)))
        f.write(text)
        for a in blocks.values():
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_checkpoint(
        path: str, adam: Adam = None
) -> Tuple[ReconModel, DepthCalibration]:
    """Model and calibration; restores Adam state into adam when given."""
    with open(path, "rb") as f:
        header = f.read(HEADER.size)
        if len(header) != HEADER.size:
            raise FormatError(path, "truncated header")
        magic, length = HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(path, "bad magic %r" % magic)
        text = f.read(length)
        payload = f.read()

    try:
        descriptor = json.loads(text.decode("utf-8"))
        arch = Architecture.from_dict(descriptor["architecture"])
        shapes = [(name, tuple(shape)) for name, shape in
                  descriptor["blocks"]]
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(path, "bad descriptor: %s" % e) from None
    if descriptor.get("version") != VERSION:
        raise FormatError(path, "unsupported version %r" % (
            descriptor.get("version"),))

    values = np.frombuffer(payload, dtype="<f4")
    expected = sum(int(np.prod(shape)) for _, shape in shapes)
    if len(values) != expected:
        raise FormatError(path, "expected %d values, found %d" % (
            expected, len(values)))

    blocks = OrderedDict()
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        blocks[name] = values[offset:offset + size].astype(
            np.float64).reshape(shape)
        offset += size

    params = OrderedDict(
        (k, a) for k, a in blocks.items() if not k.startswith("adam."))
    try:
        model = ReconModel(arch, params, steps=descriptor["steps"])
    except (ValueError, KeyError) as e:
        raise FormatError(path, "parameters do not match: %s" % e) from None

    if adam is not None:
        adam.load_state(
            descriptor.get("adam_t", 0),
            OrderedDict((k[len("adam.m."):], a) for k, a in blocks.items()
                        if k.startswith("adam.m.")),
            OrderedDict((k[len("adam.v."):], a) for k, a in blocks.items()
                        if k.startswith("adam.v.")))

    calibration = descriptor.get("calibration")
    if calibration is not None:
        calibration = DepthCalibration.from_dict(calibration)
    return model, calibration
