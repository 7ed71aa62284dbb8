"""Residual 1D CNN for spectrum classification, plus checkpoint I/O.

The architecture is fixed: a stride-2 stem conv (kernel 7, 16 filters), four
residual stages with filters (16, 32, 64, 128) of two blocks each (first
block of stages 2-4 downsamples by stride 2 through a kernel-1 projection
shortcut), global average pooling, and a dense head. The type head is one
sigmoid unit; the subtype head is four softmax units.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import DataError
from .nn import (
    Conv1D,
    Dense,
    GlobalAvgPool,
    ReLU,
    ResidualBlock,
    Sigmoid,
    Softmax,
    make_rng,
)

__all__ = [
    "CarenetModel",
    "build_carenet",
    "count_params",
    "save_checkpoint",
    "load_checkpoint",
    "INPUT_LENGTH",
    "HEADS",
    "STAGE_FILTERS",
    "BLOCKS_PER_STAGE",
]

INPUT_LENGTH = 467
HEADS = ("type", "subtype")
STAGE_FILTERS = (16, 32, 64, 128)
BLOCKS_PER_STAGE = 2
STEM_KERNEL = 7
STEM_STRIDE = 2

CHECKPOINT_MAGIC = b"CRNM"
CHECKPOINT_VERSION = 1


class CarenetModel:
    """Layer graph with explicit trunk/head split (Grad-CAM needs the seam)."""

    def __init__(self, head: str, seed: int = 0, dtype=np.float32):
        if head not in HEADS:
            raise DataError(f"head must be one of {HEADS}, got {head!r}")
        self.head = head
        self.dtype = np.dtype(dtype)
        rng = make_rng(seed)

        self.stem = Conv1D(1, STAGE_FILTERS[0], STEM_KERNEL, STEM_STRIDE, rng=rng, dtype=dtype)
        self.stem_relu = ReLU()
        self.blocks: list[ResidualBlock] = []
        in_ch = STAGE_FILTERS[0]
        for stage, filters in enumerate(STAGE_FILTERS):
            for block in range(BLOCKS_PER_STAGE):
                stride = 2 if stage > 0 and block == 0 else 1
                self.blocks.append(ResidualBlock(in_ch, filters, stride, rng=rng, dtype=dtype))
                in_ch = filters
        self.pool = GlobalAvgPool()
        self.n_classes = 1 if head == "type" else 4
        # Without normalization layers the residual trunk roughly doubles its
        # activation variance per block, so a He-initialized head would start
        # deep in sigmoid/softmax saturation where float32 gradients vanish.
        # Zero-initializing the head starts every probability at 0.5 (or
        # uniform) and lets the trunk wake up through the head's first steps.
        self.dense = Dense(STAGE_FILTERS[-1], self.n_classes, rng=None, dtype=dtype)
        self.activation = Sigmoid() if head == "type" else Softmax()

    # ---- forward / backward -------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:  # (batch, length) convenience
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != INPUT_LENGTH:
            raise DataError(f"model expects (batch, 1, {INPUT_LENGTH}) input, got {x.shape}")
        return x

    def trunk_forward(self, x: np.ndarray) -> np.ndarray:
        """Activation map after the last residual block: (batch, 128, 30)."""
        h = self.stem_relu.forward(self.stem.forward(self._check_input(x)))
        for block in self.blocks:
            h = block.forward(h)
        return h

    def head_forward(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(logits, probabilities) from a trunk activation map."""
        logits = self.dense.forward(self.pool.forward(features))
        return logits, self.activation.forward(logits)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities: (batch, 1) sigmoid or (batch, 4) softmax."""
        _, probs = self.head_forward(self.trunk_forward(x))
        return probs

    def backward(self, grad_probs: np.ndarray) -> np.ndarray:
        """Backpropagate from d(loss)/d(probabilities); fills every Param.grad."""
        g = self.activation.backward(grad_probs)
        g = self.head_backward_to_features(g)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return self.stem.backward(self.stem_relu.backward(g))

    def head_backward_to_features(self, grad_logits: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the trunk activation map, given d/d(logits)."""
        return self.pool.backward(self.dense.backward(grad_logits))

    # ---- bookkeeping ----------------------------------------------------------

    def parameters(self):
        params = self.stem.params()
        for block in self.blocks:
            params += block.params()
        params += self.dense.params()
        return params

    def trunk_parameters(self):
        params = self.stem.params()
        for block in self.blocks:
            params += block.params()
        return params

    def layer_specs(self) -> list[dict]:
        specs = [self.stem.spec(), {"kind": "relu"}]
        specs += [block.spec() for block in self.blocks]
        specs.append(self.pool.spec())
        specs.append(self.dense.spec())
        specs.append(self.activation.spec())
        return specs

    def astype(self, dtype) -> "CarenetModel":
        """Copy of this model with parameters cast (float64 replay mode)."""
        clone = CarenetModel(self.head, seed=0, dtype=dtype)
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst.value = src.value.astype(dtype)
            dst.grad = np.zeros_like(dst.value)
        return clone

    def copy(self) -> "CarenetModel":
        return self.astype(self.dtype)

    def set_parameter_values(self, values: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise DataError("parameter list length mismatch")
        for p, v in zip(params, values):
            if p.value.shape != v.shape:
                raise DataError("parameter shape mismatch")
            p.value = v.astype(p.value.dtype)
            p.grad = np.zeros_like(p.value)

    def parameter_values(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]


def build_carenet(head: str, seed: int = 0, dtype=np.float32) -> CarenetModel:
    """He-initialized model for the requested head; deterministic per seed."""
    return CarenetModel(head, seed=seed, dtype=dtype)


def count_params(model: CarenetModel) -> int:
    """Total trainable parameter count."""
    return int(sum(p.value.size for p in model.parameters()))


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout: magic "CRNM" | u16 version | u32 descriptor length | UTF-8 JSON
# descriptor | u64 float count | little-endian float32 parameter blob |
# u32 CRC32 over everything before the trailer.


def save_checkpoint(model: CarenetModel, path, metadata: dict | None = None) -> None:
    flat = [np.ascontiguousarray(p.value.astype(np.float32)) for p in model.parameters()]
    blob = b"".join(a.tobytes() for a in flat)
    n_floats = sum(a.size for a in flat)
    descriptor = {
        "head": model.head,
        "input_length": INPUT_LENGTH,
        "layers": model.layer_specs(),
        "param_shapes": [list(p.value.shape) for p in model.parameters()],
        "metadata": metadata or {},
    }
    dj = json.dumps(descriptor, separators=(",", ":"), sort_keys=True).encode("utf-8")
    body = (CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION)
            + struct.pack("<I", len(dj)) + dj + struct.pack("<Q", n_floats) + blob)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path, expect_head: str | None = None) -> tuple[CarenetModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, metadata)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 14 or raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a model checkpoint")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    body, trailer = raw[:-4], raw[-4:]
    if struct.unpack("<I", trailer)[0] != zlib.crc32(body):
        raise DataError(f"{path}: checkpoint failed its CRC32 check")
    (dj_len,) = struct.unpack_from("<I", raw, 6)
    try:
        descriptor = json.loads(raw[10:10 + dj_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint descriptor ({exc})") from exc

    head = descriptor.get("head")
    if head not in HEADS:
        raise DataError(f"{path}: checkpoint carries unknown head {head!r}")
    if expect_head is not None and head != expect_head:
        raise DataError(
            f"{path}: architecture mismatch, checkpoint head is {head!r} "
            f"but {expect_head!r} was requested"
        )
    model = CarenetModel(head, seed=0)
    if descriptor.get("layers") != model.layer_specs():
        raise DataError(f"{path}: checkpoint layer graph does not match this architecture")

    offset = 10 + dj_len
    (n_floats,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    expected = sum(p.value.size for p in model.parameters())
    if n_floats != expected or offset + 4 * n_floats != len(raw) - 4:
        raise DataError(f"{path}: parameter blob length mismatch")
    flat = np.frombuffer(raw, dtype="<f4", count=n_floats, offset=offset)
    values = []
    pos = 0
    for p in model.parameters():
        size = p.value.size
        values.append(flat[pos:pos + size].reshape(p.value.shape).copy())
        pos += size
    model.set_parameter_values(values)
    return model, descriptor.get("metadata", {})
