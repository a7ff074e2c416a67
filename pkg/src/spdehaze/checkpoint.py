"""Binary checkpoint container: magic "SPDZ", version, config echo, named
float32 tensors. Round trips are bitwise exact."""

import struct

import numpy as np

MAGIC = b"SPDZ"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, tensors, config_text=""):
    """tensors: ordered mapping name -> float32 ndarray."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        cfg = config_text.encode("utf-8")
        f.write(struct.pack("<Q", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)
            f.write(struct.pack("<Q", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n, what):
        if self.off + n > len(self.blob):
            raise CheckpointError(
                f"{self.path}: truncated while reading {what} at byte offset {self.off} "
                f"(need {n} bytes, have {len(self.blob) - self.off})")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path):
    """Returns (tensors dict name -> float32 ndarray, config_text)."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r} at byte offset 0, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads version {VERSION}")
    cfg_len = r.u64("config length")
    config_text = r.take(cfg_len, "config block").decode("utf-8")
    count = r.u64("tensor count")
    tensors = {}
    for i in range(count):
        name_len = r.u64(f"name length of tensor {i}")
        name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        rank = r.u64(f"rank of {name}")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"dims of {name}"))
        n = int(np.prod(dims)) if rank else 1
        payload = r.take(4 * n, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.off} trailing bytes at offset {r.off}")
    return tensors, config_text


def assign_named(named_params, tensors, strict=True):
    """Load arrays into (name, Tensor) pairs; mismatches are collected and raised."""
    params = dict(named_params)
    missing = [n for n in params if n not in tensors]
    unknown = [n for n in tensors if n not in params]
    if missing or (strict and unknown):
        raise CheckpointError(
            f"checkpoint does not match model: missing={sorted(missing)} unknown={sorted(unknown)}")
    bad = [f"{n}: file {tensors[n].shape} vs model {params[n].shape}"
           for n in params if tensors[n].shape != params[n].shape]
    if bad:
        raise CheckpointError("checkpoint dimension mismatch: " + "; ".join(sorted(bad)))
    for n, p in params.items():
        p.data = tensors[n].astype(p.dtype)
