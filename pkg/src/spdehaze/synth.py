"""Procedural scene generation and atmospheric-scattering haze synthesis.

Scenes are piecewise-constant depth compositions (bright far background plus
3-8 foreground shapes) whose albedo brightness floor rises with depth, the
same monocular cue a relative depth estimator keys on. Haze follows
I = J*T + (1-T)*A with T = exp(-beta * d_scale * d), evaluated in float64.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image


@dataclass
class SceneSample:
    J: np.ndarray          # clear RGB, HxWx3 in [0,1]
    d: np.ndarray          # relative depth, HxW in [0,1]
    A: float               # atmospheric light
    beta: float            # scattering coefficient
    I: np.ndarray          # hazy RGB, HxWx3 in [0,1]


@dataclass
class SampleMeta:
    idx: int
    beta: float
    A: float
    dmin: float
    dmax: float
    hazy: str
    clear: str
    depth: str


@dataclass
class DatasetManifest:
    root: str
    count: int
    size: int
    seed: int
    split: str
    d_scale: float
    beta_range: tuple
    A_range: tuple
    entries: list = field(default_factory=list)


def synthesize_haze(J, d, A, beta, d_scale=3.0):
    """Apply the scattering model pixelwise; clipping only guards round-off."""
    if beta < 0:
        raise ValueError(f"synthesize_haze: beta must be >= 0, got {beta}")
    if J.shape[:2] != d.shape:
        raise ValueError(f"synthesize_haze: image {J.shape} vs depth {d.shape}")
    t = np.exp(-beta * d_scale * d)[..., None]
    hazy = J * t + (1.0 - t) * np.asarray(A)
    return np.clip(hazy, 0.0, 1.0)


def invert_haze(I, d, A, beta, d_scale=3.0):
    """Algebraic inversion of the scattering model: J = (I - (1-T)A) / T."""
    t = np.exp(-beta * d_scale * d)[..., None]
    return (I - (1.0 - t) * np.asarray(A)) / t


def transmission(d, beta, d_scale=3.0):
    return np.exp(-beta * d_scale * d)


# albedo dark-channel floor as a function of plane depth; far objects are
# brighter, which is what makes the scenes rankable by a haze-style estimator
def _lift(depth):
    return 0.08 + 0.72 * depth


def _object_albedo(rng, depth):
    u = rng.uniform(0.0, 1.0, 3)
    u = u - u.min()
    m = u.max()
    if m > 1e-9:
        u = u / m
    sat = rng.uniform(0.25, 0.7)
    lift = _lift(depth)
    return lift + (0.93 - lift) * u * sat


def generate_scene(seed, size=64):
    """Deterministic (J, d) pair; background at depth 1, objects in front.

    Every depth plane keeps a minimum visible area, so no object survives
    occlusion only as a sliver."""
    if size < 32 or size % 8 != 0:
        raise ValueError(f"generate_scene: size must be >= 32 and a multiple of 8, got {size}")
    rng = np.random.default_rng(seed)
    min_area = max(48, (size * size) // 80)
    while True:
        J, d = _draw_scene(rng, size)
        levels, counts = np.unique(d, return_counts=True)
        if levels.size >= 2 and counts.min() >= min_area:
            return J, d


def _draw_scene(rng, size):
    # neutral-gray background gradient keeps the per-channel airlight estimate
    # even, so dividing by it preserves the albedo-floor ordering
    lift_bg = _lift(1.0)
    g0 = lift_bg + (0.95 - lift_bg) * rng.uniform(0.0, 1.0)
    g1 = lift_bg + (0.95 - lift_bg) * rng.uniform(0.0, 1.0)
    ramp = np.linspace(g0, g1, size)
    if rng.integers(0, 2) == 0:
        ramp2d = np.broadcast_to(ramp[:, None], (size, size))
    else:
        ramp2d = np.broadcast_to(ramp[None, :], (size, size))
    J = np.repeat(ramp2d[..., None], 3, axis=-1)
    J = np.ascontiguousarray(J)
    d = np.ones((size, size))

    n_obj = int(rng.integers(3, 9))
    planes = np.linspace(0.1, 0.88, n_obj) + rng.uniform(-0.01, 0.01, n_obj)
    planes = planes[rng.permutation(n_obj)]
    yy, xx = np.mgrid[0:size, 0:size]
    for k in np.argsort(planes)[::-1]:          # paint far to near
        depth = float(planes[k])
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        ry, rx = rng.uniform(0.08, 0.22, 2) * size
        if rng.integers(0, 2) == 0:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        albedo = _object_albedo(rng, depth)
        noise = rng.normal(0.0, 0.01, (size, size, 3))
        J[mask] = np.clip(albedo[None, :] + noise[mask], 0.0, 1.0)
        d[mask] = depth

    noise_bg = rng.normal(0.0, 0.006, (size, size, 3))
    J = np.clip(J + noise_bg, 0.0, 1.0)
    return J, d


def render_sample(seed, size, beta, A, d_scale=3.0):
    J, d = generate_scene(seed, size)
    return SceneSample(J=J, d=d, A=float(A), beta=float(beta), I=synthesize_haze(J, d, A, beta, d_scale))


# ---------------------------------------------------------------------------
# PNG + manifest I/O


def save_png8(path, img):
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_png8(path):
    return np.asarray(Image.open(path), dtype=np.float32) / np.float32(255.0)


def save_png16(path, gray01):
    arr = np.round(np.clip(gray01, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path)


def load_png16(path):
    return np.asarray(Image.open(path), dtype=np.float32) / np.float32(65535.0)


def _sample_seed(seed, i):
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(i,)).generate_state(1)[0])


def make_dataset(root, n, seed, size=64, beta_range=(0.5, 1.5), A_range=(0.7, 1.0),
                 d_scale=3.0, split="train"):
    """Write n samples (hazy/clear/depth PNGs) plus a key=value manifest."""
    if n < 1:
        raise ValueError(f"make_dataset: n must be >= 1, got {n}")
    if beta_range[0] < 0 or beta_range[1] < beta_range[0]:
        raise ValueError(f"make_dataset: bad beta_range {beta_range}")
    os.makedirs(root, exist_ok=True)
    manifest = DatasetManifest(root=root, count=n, size=size, seed=seed, split=split,
                               d_scale=d_scale, beta_range=tuple(beta_range), A_range=tuple(A_range))
    haze_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(999999,)))
    for i in range(n):
        beta = float(haze_rng.uniform(*beta_range))
        A = float(haze_rng.uniform(*A_range))
        s = render_sample(_sample_seed(seed, i), size, beta, A, d_scale)
        dmin, dmax = float(s.d.min()), float(s.d.max())
        names = {k: f"{split}_{i:04d}_{k}.png" for k in ("hazy", "clear", "depth")}
        save_png8(os.path.join(root, names["hazy"]), s.I)
        save_png8(os.path.join(root, names["clear"]), s.J)
        save_png16(os.path.join(root, names["depth"]), (s.d - dmin) / max(dmax - dmin, 1e-12))
        manifest.entries.append(SampleMeta(idx=i, beta=beta, A=A, dmin=dmin, dmax=dmax,
                                           hazy=names["hazy"], clear=names["clear"], depth=names["depth"]))
    write_manifest(manifest)
    return manifest


def manifest_path(root, split):
    return os.path.join(root, f"manifest_{split}.txt")


def write_manifest(m):
    lines = [
        "format=spdehaze-dataset-v1",
        f"count={m.count}",
        f"size={m.size}",
        f"seed={m.seed}",
        f"split={m.split}",
        f"d_scale={m.d_scale!r}",
        f"beta_range={m.beta_range[0]!r},{m.beta_range[1]!r}",
        f"A_range={m.A_range[0]!r},{m.A_range[1]!r}",
    ]
    for e in m.entries:
        lines.append(
            f"sample=idx={e.idx} beta={e.beta!r} A={e.A!r} dmin={e.dmin!r} dmax={e.dmax!r} "
            f"hazy={e.hazy} clear={e.clear} depth={e.depth}"
        )
    with open(manifest_path(m.root, m.split), "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_manifest(root, split="train"):
    path = manifest_path(root, split)
    kv = {}
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            if key == "sample":
                fields = dict(tok.split("=", 1) for tok in value.split())
                entries.append(SampleMeta(
                    idx=int(fields["idx"]), beta=float(fields["beta"]), A=float(fields["A"]),
                    dmin=float(fields["dmin"]), dmax=float(fields["dmax"]),
                    hazy=fields["hazy"], clear=fields["clear"], depth=fields["depth"]))
            else:
                kv[key] = value
    if kv.get("format") != "spdehaze-dataset-v1":
        raise ValueError(f"load_manifest: unrecognized format in {path}")
    b0, b1 = kv["beta_range"].split(",")
    a0, a1 = kv["A_range"].split(",")
    m = DatasetManifest(root=root, count=int(kv["count"]), size=int(kv["size"]),
                        seed=int(kv["seed"]), split=kv["split"], d_scale=float(kv["d_scale"]),
                        beta_range=(float(b0), float(b1)), A_range=(float(a0), float(a1)),
                        entries=entries)
    for e in m.entries:
        for name in (e.hazy, e.clear, e.depth):
            if not os.path.exists(os.path.join(root, name)):
                raise FileNotFoundError(f"load_manifest: missing file {name}")
    return m


def load_sample(manifest, i):
    e = manifest.entries[i]
    I = load_png8(os.path.join(manifest.root, e.hazy))
    J = load_png8(os.path.join(manifest.root, e.clear))
    d = load_png16(os.path.join(manifest.root, e.depth)) * (e.dmax - e.dmin) + e.dmin
    return SceneSample(J=J, d=d.astype(np.float32), A=e.A, beta=e.beta, I=I)
