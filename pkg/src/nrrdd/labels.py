"""Relabeling and transfer-record serialization.

Four interchange modes share one header; bodies differ:
  dbr - pair indices, mix spec, and two teacher distances (two f32 values)
  sl  - pair indices, mix spec, and the full soft-label vector (K x f32)
  cl  - pair indices, mix spec, and the two soft-label entries of the pair
  oh  - original index and its hard class id only

Layout (little-endian): magic "NRRD", u16 version, u8 mode, u8 mix method,
u32 record count, u32 num_classes; per-record body; u32 CRC32 footer.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch

from .discovery import SyntheticRecord
from .mixing import AugmentSpec, apply, sample_spec
from .models import forward
from .snapshot import ModelSnapshot

MAGIC = b"NRRD"
VERSION = 1
LOG_FLOOR = 1e-12

MODES = ("dbr", "sl", "cl", "oh")
_MODE_CODES = {"dbr": 1, "sl": 2, "cl": 3, "oh": 4}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}
_MIX_CODES = {"none": 0, "cutmix": 1, "mixup": 2}
_CODE_MIXES = {v: k for k, v in _MIX_CODES.items()}

_HEADER = struct.Struct("<4sHBBII")
_PAIR_PREFIX = struct.Struct("<IIHHf4HQ")   # org, aug, y_org, y_aug, lam, box, seed
_DBR_TAIL = struct.Struct("<ff")
_CL_TAIL = struct.Struct("<ff")
_OH_BODY = struct.Struct("<IH")


class StoreFormatError(RuntimeError):
    pass


class StoreModeError(StoreFormatError):
    pass


@dataclass
class DbrRecord:
    org_idx: int
    aug_idx: int
    y_org: int
    y_aug: int
    aug_spec: AugmentSpec
    d_org: float
    d_aug: float


@dataclass
class SlRecord:
    org_idx: int
    aug_idx: int
    y_org: int
    y_aug: int
    aug_spec: AugmentSpec
    y_soft: np.ndarray


@dataclass
class ClRecord:
    org_idx: int
    aug_idx: int
    y_org: int
    y_aug: int
    aug_spec: AugmentSpec
    p_org: float
    p_aug: float


@dataclass
class OhRecord:
    org_idx: int
    y_org: int


@dataclass
class LabelStore:
    mode: str
    mix_method: str
    num_classes: int
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def label_payload_bytes(mode: str, num_classes: int) -> int:
    """Bytes of pure label data per record (excludes indices and mix spec)."""
    if mode == "sl":
        return 4 * num_classes
    if mode in ("dbr", "cl"):
        return 8
    if mode == "oh":
        return 2
    raise ValueError(f"unknown mode '{mode}'")


def record_nbytes(mode: str, num_classes: int) -> int:
    """Total serialized bytes per record for a mode."""
    if mode == "oh":
        return _OH_BODY.size
    base = _PAIR_PREFIX.size
    if mode == "dbr":
        return base + _DBR_TAIL.size
    if mode == "cl":
        return base + _CL_TAIL.size
    if mode == "sl":
        return base + 4 * num_classes
    raise ValueError(f"unknown mode '{mode}'")


def soft_label(snapshot: ModelSnapshot, x_mix) -> np.ndarray:
    """Teacher probability vector for one mixed image."""
    trace = forward(snapshot, x_mix if np.ndim(x_mix) == 4 else np.asarray(x_mix)[None])
    if len(trace) != 1:
        raise ValueError("soft_label expects a single image")
    return trace.probs[0].cpu().numpy()


def dbr_distances(y_soft: np.ndarray, y_org: int, y_aug: int) -> tuple[float, float]:
    """Cross-entropy of the soft label against the two one-hot targets.

    Reduces to -ln(p[y] + floor); zero iff the teacher is certain of the class.
    """
    p = np.asarray(y_soft, dtype=np.float64)
    if p.ndim != 1 or np.any(p < -1e-6) or abs(p.sum() - 1.0) > 1e-3:
        raise ValueError("y_soft is not a probability vector")
    if not (0 <= y_org < len(p) and 0 <= y_aug < len(p)):
        raise ValueError("class index out of range")
    d_org = -np.log(p[y_org] + LOG_FLOOR)
    d_aug = -np.log(p[y_aug] + LOG_FLOOR)
    return float(d_org), float(d_aug)


def relabel(snapshot: ModelSnapshot, records: list[SyntheticRecord], mode: str,
            pairs_per_image: int = 1, seed: int = 0, mix_method: str = "cutmix",
            allow_unrefined: bool = False, same_class: bool = False,
            batch_size: int = 128) -> LabelStore:
    """Build a LabelStore over the (refined) records.

    Pair 0 of each record reuses the partner and spec kept by refinement when
    present; additional pairs (and pairs of never-refined records) draw fresh
    partners and specs from the given seed. In dbr mode the pair-0 distances are
    also written back onto the records.
    """
    if mode not in MODES:
        raise ValueError(f"unknown label mode '{mode}'")
    if pairs_per_image < 1:
        raise ValueError("pairs_per_image must be >= 1")
    unrefined = [i for i, r in enumerate(records) if not r.refined]
    if unrefined and not allow_unrefined:
        raise ValueError(
            f"{len(unrefined)} records are unrefined; pass allow_unrefined=True "
            "for discovery-only runs")

    k = snapshot.num_classes
    if mode == "oh":
        store = LabelStore(mode="oh", mix_method="none", num_classes=k,
                           records=[OhRecord(i, int(r.class_id))
                                    for i, r in enumerate(records)])
        return store

    rng = np.random.default_rng([seed, 8191])
    hw = records[0].image.shape[-2:]
    labels_arr = np.array([r.class_id for r in records])
    class_pools = {c: np.nonzero(labels_arr == c)[0] for c in np.unique(labels_arr)}
    pairs: list[tuple[int, int, AugmentSpec]] = []
    for i, rec in enumerate(records):
        for p in range(pairs_per_image):
            if p == 0 and rec.partner_idx is not None and rec.aug_spec is not None:
                pairs.append((i, rec.partner_idx, rec.aug_spec))
            else:
                if same_class:
                    cands = class_pools[rec.class_id]
                    j = int(cands[rng.integers(0, len(cands))])
                else:
                    j = int(rng.integers(0, len(records)))
                spec = sample_spec(mix_method, hw, int(rng.integers(0, 2 ** 63)))
                pairs.append((i, j, spec))
    methods = {spec.method for _, _, spec in pairs}
    if len(methods) > 1:
        raise ValueError(f"records mix multiple augmentation methods: {sorted(methods)}")
    method = methods.pop()

    out: list = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        mixes = np.stack([apply(spec, records[i].image, records[j].image)
                          for i, j, spec in chunk])
        probs = forward(snapshot, mixes).probs.cpu().numpy()
        for offset, ((i, j, spec), p) in enumerate(zip(chunk, probs)):
            y_org, y_aug = int(records[i].class_id), int(records[j].class_id)
            if mode == "sl":
                out.append(SlRecord(i, j, y_org, y_aug, spec,
                                    p.astype(np.float32)))
            elif mode == "cl":
                out.append(ClRecord(i, j, y_org, y_aug, spec,
                                    float(p[y_org]), float(p[y_aug])))
            else:
                d_org, d_aug = dbr_distances(p, y_org, y_aug)
                out.append(DbrRecord(i, j, y_org, y_aug, spec, d_org, d_aug))
                if start + offset == i * pairs_per_image:
                    records[i].d_org, records[i].d_aug = d_org, d_aug
    return LabelStore(mode=mode, mix_method=method, num_classes=k, records=out)


def _pack_prefix(rec) -> bytes:
    s = rec.aug_spec
    return _PAIR_PREFIX.pack(rec.org_idx, rec.aug_idx, rec.y_org, rec.y_aug,
                             s.lam, *s.box, s.seed)


def _unpack_prefix(raw: bytes, mix_method: str):
    org, aug, y_org, y_aug, lam, bt, bl, bh, bw, seed = _PAIR_PREFIX.unpack(raw)
    spec = AugmentSpec(method=mix_method, lam=float(lam), box=(bt, bl, bh, bw), seed=seed)
    return org, aug, y_org, y_aug, spec


def write_store(store: LabelStore, path: str) -> int:
    """Serialize; returns the file size in bytes."""
    buf = bytearray()
    buf += _HEADER.pack(MAGIC, VERSION, _MODE_CODES[store.mode],
                        _MIX_CODES[store.mix_method], len(store.records),
                        store.num_classes)
    for rec in store.records:
        if store.mode == "oh":
            buf += _OH_BODY.pack(rec.org_idx, rec.y_org)
            continue
        buf += _pack_prefix(rec)
        if store.mode == "dbr":
            buf += _DBR_TAIL.pack(rec.d_org, rec.d_aug)
        elif store.mode == "cl":
            buf += _CL_TAIL.pack(rec.p_org, rec.p_aug)
        else:
            y = np.ascontiguousarray(rec.y_soft, dtype="<f4")
            if y.shape != (store.num_classes,):
                raise ValueError("soft label length does not match num_classes")
            buf += y.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as f:
        f.write(bytes(buf))
    return len(buf)


def read_store(path: str, expect_mode: str | None = None) -> LabelStore:
    """Parse and checksum-verify a store file."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _HEADER.size + 4 or buf[:4] != MAGIC:
        raise StoreFormatError(f"not a label store: {path}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise StoreFormatError(f"label store checksum mismatch: {path}")
    magic, version, mode_code, mix_code, count, k = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise StoreFormatError(f"unsupported store version {version}")
    if mode_code not in _CODE_MODES or mix_code not in _CODE_MIXES:
        raise StoreFormatError("unknown mode or mix-method code")
    mode = _CODE_MODES[mode_code]
    if expect_mode is not None and mode != expect_mode:
        raise StoreModeError(f"store holds '{mode}' records, expected '{expect_mode}'")
    mix_method = _CODE_MIXES[mix_code]
    body = buf[_HEADER.size:-4]
    step = record_nbytes(mode, k)
    if len(body) != count * step:
        raise StoreFormatError("record section length mismatch")
    records: list = []
    for i in range(count):
        raw = body[i * step:(i + 1) * step]
        if mode == "oh":
            org, y = _OH_BODY.unpack(raw)
            records.append(OhRecord(org, y))
            continue
        org, aug, y_org, y_aug, spec = _unpack_prefix(raw[:_PAIR_PREFIX.size], mix_method)
        tail = raw[_PAIR_PREFIX.size:]
        if mode == "dbr":
            d_org, d_aug = _DBR_TAIL.unpack(tail)
            records.append(DbrRecord(org, aug, y_org, y_aug, spec, d_org, d_aug))
        elif mode == "cl":
            p_org, p_aug = _CL_TAIL.unpack(tail)
            records.append(ClRecord(org, aug, y_org, y_aug, spec, p_org, p_aug))
        else:
            y_soft = np.frombuffer(tail, dtype="<f4").copy()
            records.append(SlRecord(org, aug, y_org, y_aug, spec, y_soft))
    return LabelStore(mode=mode, mix_method=mix_method, num_classes=k, records=records)
