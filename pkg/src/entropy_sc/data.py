"""Datasets: the bars benchmark, image patches, whitening, and file formats.

File formats handled here:

* ``SCD1`` binary datasets: magic ``b"SCD1"``, little-endian u32 version (1),
  u64 N, u64 D, then N*D float32 values in row-major order.
* CSV matrices, one row per datapoint (or per dictionary row), with an
  optional header row.
* 8-bit binary PGM (P5) images, used for image input and dictionary previews.
"""

import csv
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Dataset, make_rng, sample_linear_laplace

log = logging.getLogger(__name__)

SCD_MAGIC = b"SCD1"
SCD_VERSION = 1
_SCD_HEADER = struct.Struct("<4sIQQ")


# ---------------------------------------------------------------------------
# bars
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BarsSpec:
    grid: int = 5
    n_fields: int = 10
    lam: float = 1.0
    noise_sigma: float = 0.1
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError("bars grid must be at least 2")
        if not 1 <= self.n_fields <= 2 * self.grid:
            raise ValueError(f"n_fields must lie in [1, {2 * self.grid}] for grid {self.grid}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (self.lam > 0 and self.noise_sigma >= 0):
            raise ValueError("lam must be > 0 and noise_sigma >= 0")


def bars_dictionary(grid, n_fields):
    """One-hot bars on a grid x grid image: horizontal bars first, then vertical."""
    w = np.zeros((grid * grid, n_fields))
    for k in range(n_fields):
        img = np.zeros((grid, grid))
        if k < grid:
            img[k, :] = 1.0
        else:
            img[:, k - grid] = 1.0
        w[:, k] = img.ravel()
    return w


def generate_bars(spec):
    """Bars data x = W z + eps with unnormalized one-hot bar columns.

    Returns:
        (Dataset, ground-truth W of shape D x H)
    """
    w = bars_dictionary(spec.grid, spec.n_fields)
    data, _ = sample_linear_laplace(w, np.full(spec.n_fields, spec.lam), spec.noise_sigma ** 2,
                                    spec.n, spec.seed, source="bars")
    data.meta.update({"grid": spec.grid, "n_fields": spec.n_fields, "lam": spec.lam,
                      "noise_sigma": spec.noise_sigma})
    return data, w


# ---------------------------------------------------------------------------
# image patches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchSpec:
    patch_side: int = 16
    n_patches: int = 10000
    whitening: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.patch_side < 2:
            raise ValueError("patch_side must be at least 2")
        if self.n_patches < 1:
            raise ValueError("n_patches must be >= 1")
        if self.whitening not in ("none", "zca"):
            raise ValueError(f"unknown whitening {self.whitening!r}")


def extract_patches(images, spec):
    """Random square patches, flattened row-major, with each patch's mean removed.

    Patch positions are uniform over all valid offsets of a uniformly chosen
    image. With ``spec.whitening == "zca"`` the result is ZCA whitened.
    """
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ValueError("no images given")
    p = spec.patch_side
    for i, im in enumerate(images):
        if im.ndim != 2 or im.shape[0] < p or im.shape[1] < p:
            raise ValueError(f"image {i} with shape {im.shape} is smaller than the {p}x{p} patch size")
    rng = make_rng(spec.seed)
    which = rng.integers(0, len(images), size=spec.n_patches)
    rows = np.empty(spec.n_patches, dtype=np.int64)
    cols = np.empty(spec.n_patches, dtype=np.int64)
    for i, im in enumerate(images):
        sel = which == i
        k = int(sel.sum())
        rows[sel] = rng.integers(0, im.shape[0] - p + 1, size=k)
        cols[sel] = rng.integers(0, im.shape[1] - p + 1, size=k)
    out = np.empty((spec.n_patches, p * p))
    for j in range(spec.n_patches):
        im = images[which[j]]
        out[j] = im[rows[j]:rows[j] + p, cols[j]:cols[j] + p].ravel()
    out -= out.mean(axis=1, keepdims=True)
    data = Dataset(out, source="patches", seed=spec.seed,
                   meta={"patch_side": p, "n_images": len(images), "whitening": spec.whitening})
    if spec.whitening == "zca":
        data, _ = zca_whiten(data)
    return data


def zca_whiten(data, epsilon=1e-5):
    """ZCA whitening X_c (C + eps I)^(-1/2), where X_c is centered per feature.

    Returns:
        (whitened Dataset, D x D transform). The feature means are kept in
        ``meta["zca_mean"]`` so the transform can be applied to new data.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    x = data.x
    if x.shape[0] <= x.shape[1]:
        log.warning("ZCA with N=%d <= D=%d: covariance estimate is singular", x.shape[0], x.shape[1])
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] < 1e-12:
        # mean-removed patches always have a null DC direction; eps regularizes it
        log.warning("ZCA: covariance is ill-conditioned (smallest eigenvalue %.3g < 1e-12)", evals[0])
    evals = np.maximum(evals, 0.0)
    transform = (evecs / np.sqrt(evals + epsilon)) @ evecs.T
    meta = dict(data.meta, whitening="zca", zca_epsilon=epsilon, zca_mean=mean.tolist())
    return Dataset(xc @ transform, data.source, data.seed, meta), transform


def dead_leaves_image(size, seed, n_disks=4000, r_min=1.5, r_max=40.0, blur=1.0):
    """Synthetic dead-leaves image with occluding disks of power-law radii.

    A stand-in for natural photographs: edges at all orientations and a
    roughly scale-invariant spectrum. Gray levels are uniform in [0, 1].
    """
    rng = make_rng(seed)
    img = np.full((size, size), 0.5)
    # density ~ 1/r^3 by inverse CDF between r_min and r_max
    u = rng.random(n_disks)
    radii = 1.0 / np.sqrt(u / r_max ** 2 + (1.0 - u) / r_min ** 2)
    cy = rng.random(n_disks) * size
    cx = rng.random(n_disks) * size
    gray = rng.random(n_disks)
    yy, xx = np.mgrid[0:size, 0:size]
    # painted back to front: later disks occlude earlier ones
    for r, y, x, g in zip(radii, cy, cx, gray):
        y0, y1 = max(int(y - r), 0), min(int(y + r) + 2, size)
        x0, x1 = max(int(x - r), 0), min(int(x + r) + 2, size)
        if y0 >= y1 or x0 >= x1:
            continue
        sub = (yy[y0:y1, x0:x1] - y) ** 2 + (xx[y0:y1, x0:x1] - x) ** 2 <= r * r
        img[y0:y1, x0:x1][sub] = g
    if blur > 0:
        from scipy.ndimage import gaussian_filter
        img = gaussian_filter(img, blur, mode="reflect")
    return img


def dead_leaves_patches(n_patches, patch_side=8, n_images=8, image_size=256, seed=0, whitening="zca"):
    """Patch dataset drawn from ``n_images`` dead-leaves images."""
    images = [dead_leaves_image(image_size, seed=seed * 1000 + i) for i in range(n_images)]
    spec = PatchSpec(patch_side=patch_side, n_patches=n_patches, whitening=whitening, seed=seed)
    data = extract_patches(images, spec)
    data.meta["images"] = "dead_leaves"
    return data


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def write_scd1(path, data):
    x = np.ascontiguousarray(np.asarray(getattr(data, "x", data)), dtype="<f4")
    n, d = x.shape
    with open(path, "wb") as fh:
        fh.write(_SCD_HEADER.pack(SCD_MAGIC, SCD_VERSION, n, d))
        fh.write(x.tobytes(order="C"))


def read_scd1(path, source="imported"):
    with open(path, "rb") as fh:
        head = fh.read(_SCD_HEADER.size)
        if len(head) < _SCD_HEADER.size:
            raise ValueError(f"{path}: truncated SCD1 header")
        magic, version, n, d = _SCD_HEADER.unpack(head)
        if magic != SCD_MAGIC:
            raise ValueError(f"{path}: not an SCD1 file (magic {magic!r})")
        if version != SCD_VERSION:
            raise ValueError(f"{path}: unsupported SCD1 version {version}")
        payload = fh.read()
    if len(payload) != 4 * n * d:
        raise ValueError(f"{path}: expected {n}x{d} float32 payload, found {len(payload)} bytes")
    x = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    return Dataset(x.astype(np.float64), source=source)


def read_csv_matrix(path):
    """Numeric CSV matrix; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as err:
        raise ValueError(f"{path}: non-numeric CSV entry ({err})") from None
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{path}: CSV rows have inconsistent lengths")
    return arr


def write_csv_matrix(path, arr, prefix="x"):
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{prefix}{j}" for j in range(arr.shape[1])])
        for row in arr:
            w.writerow([repr(float(v)) for v in row])


def load_dataset(path, source="imported"):
    """Read an SCD1 file, or a CSV file when the name ends in ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return Dataset(read_csv_matrix(path), source=source)
    return read_scd1(path, source=source)


def read_pgm(path):
    """8-bit binary PGM (P5) as a float array scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    width, height, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    data = np.frombuffer(raw[pos:pos + width * height], dtype=np.uint8)
    if data.size != width * height:
        raise ValueError(f"{path}: PGM raster is truncated")
    return data.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image):
    """Write a uint8 image (or floats in [0, 1]) as binary PGM."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def field_grid(w, patch_shape=None, n_cols=None):
    """Tile dictionary columns into one uint8 image.

    Fields are placed in row-major order with 1-pixel separators (value 0)
    and each field is min-max scaled to 0..255 on its own.
    """
    w = np.asarray(w, dtype=np.float64)
    d, h = w.shape
    if patch_shape is None:
        side = int(round(math.sqrt(d)))
        if side * side != d:
            raise ValueError(f"D={d} is not a square; pass patch_shape")
        patch_shape = (side, side)
    ph, pw = patch_shape
    if n_cols is None:
        n_cols = int(math.ceil(math.sqrt(h)))
    n_rows = int(math.ceil(h / n_cols))
    out = np.zeros((n_rows * (ph + 1) + 1, n_cols * (pw + 1) + 1), dtype=np.uint8)
    for k in range(h):
        f = w[:, k].reshape(ph, pw)
        lo, hi = f.min(), f.max()
        scaled = np.zeros_like(f) if hi == lo else (f - lo) / (hi - lo)
        r, c = divmod(k, n_cols)
        y, x = 1 + r * (ph + 1), 1 + c * (pw + 1)
        out[y:y + ph, x:x + pw] = np.round(scaled * 255.0).astype(np.uint8)
    return out
