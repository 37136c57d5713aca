"""Model snapshots: runtime handle plus a self-describing versioned file container."""
from __future__ import annotations

import copy
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .models import bn_modules, build_model

MAGIC = b"NRRS"
VERSION = 1


class SnapshotFormatError(RuntimeError):
    pass


@dataclass
class ModelSnapshot:
    """A trained classifier plus everything the pipeline reads off it.

    The module is treated as immutable after construction; forward passes on a
    shared snapshot are safe from multiple threads. Pixel normalization
    constants of the source data travel with the weights so stored synthetic
    images stay in interpretable [0,1] space.
    """

    arch_id: str
    module: nn.Module
    num_classes: int
    input_shape: tuple[int, int, int]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    metadata: dict = field(default_factory=dict)

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.norm_mean, dtype=x.dtype).view(1, -1, 1, 1)
        std = torch.as_tensor(self.norm_std, dtype=x.dtype).view(1, -1, 1, 1)
        return (x - mean) / std

    @property
    def bn_stats(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(running_mean, running_var) per BatchNorm layer, execution order."""
        out = []
        for m in bn_modules(self.module):
            out.append((m.running_mean.detach().cpu().numpy().copy(),
                        m.running_var.detach().cpu().numpy().copy()))
        return out

    @property
    def classifier_w(self) -> np.ndarray:
        """Final-layer class weight matrix, shape (num_classes, feature_channels)."""
        return self.module.classifier.weight.detach().cpu().numpy().copy()

    def cast(self, dtype: torch.dtype) -> "ModelSnapshot":
        """Deep-copied snapshot with parameters cast to `dtype` (for oracle checks)."""
        module = copy.deepcopy(self.module).to(dtype)
        return ModelSnapshot(self.arch_id, module, self.num_classes, self.input_shape,
                             self.norm_mean.copy(), self.norm_std.copy(),
                             dict(self.metadata))

    # ------------------------------------------------------------------
    # container I/O
    # ------------------------------------------------------------------
    def save(self, path: str) -> None:
        state = self.module.state_dict()
        tensors = []
        blobs = []
        offset = 0
        for name, t in state.items():
            arr = t.detach().cpu().numpy()
            arr = np.ascontiguousarray(arr)
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            raw = arr.tobytes()
            tensors.append({
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            })
            blobs.append(raw)
            offset += len(raw)
        header = {
            "arch_id": self.arch_id,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "norm_mean": [float(v) for v in self.norm_mean],
            "norm_std": [float(v) for v in self.norm_std],
            "metadata": self.metadata,
            "tensors": tensors,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        buf = bytearray()
        buf += MAGIC
        buf += struct.pack("<HI", VERSION, len(hbytes))
        buf += hbytes
        for raw in blobs:
            buf += raw
        buf += struct.pack("<I", zlib.crc32(bytes(buf)))
        with open(path, "wb") as f:
            f.write(bytes(buf))

    @classmethod
    def load(cls, path: str) -> "ModelSnapshot":
        with open(path, "rb") as f:
            buf = f.read()
        if len(buf) < 14 or buf[:4] != MAGIC:
            raise SnapshotFormatError(f"not a model snapshot file: {path}")
        (crc,) = struct.unpack("<I", buf[-4:])
        if zlib.crc32(buf[:-4]) != crc:
            raise SnapshotFormatError(f"snapshot checksum mismatch: {path}")
        version, hlen = struct.unpack("<HI", buf[4:10])
        if version != VERSION:
            raise SnapshotFormatError(f"unsupported snapshot version {version}")
        header = json.loads(buf[10:10 + hlen].decode())
        body = buf[10 + hlen:-4]
        module = build_model(header["arch_id"], header["num_classes"],
                             in_channels=header["input_shape"][0])
        state = {}
        for spec in header["tensors"]:
            raw = body[spec["offset"]:spec["offset"] + spec["nbytes"]]
            arr = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"])
            state[spec["name"]] = torch.from_numpy(arr.copy())
        module.load_state_dict(state, strict=True)
        module.eval()
        return cls(
            arch_id=header["arch_id"],
            module=module,
            num_classes=header["num_classes"],
            input_shape=tuple(header["input_shape"]),
            norm_mean=np.asarray(header["norm_mean"], dtype=np.float32),
            norm_std=np.asarray(header["norm_std"], dtype=np.float32),
            metadata=header["metadata"],
        )
