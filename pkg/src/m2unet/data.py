"""Dataset ingestion, preprocessing, augmentation, and synthetic data.

On-disk format is binary PPM (P6) for images and PGM (P5) for masks,
matched by filename stem under ``images/`` and ``masks/``.  Ingestion
resizes (bilinear for images, nearest for masks), maps pixels to [-1, 1]
via ``v / 127.5 - 1``, and thresholds masks at 127 so they are strictly
binary from then on.

Augmentations draw every parameter from a caller-provided generator;
geometric ops use one parameter set for image and mask (nearest sampling
keeps masks binary), cutout blanks a rectangle in the image only, and
cutmix transplants a donor rectangle into both.  The per-sample generator
is derived from (seed, epoch, index) so parallel loading cannot reorder
randomness.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .errors import ConfigError, FormatError, ShapeError


@dataclass
class Sample:
    """One training pair: image in [-1, 1], strictly binary mask."""

    image: Tensor   # (H, W, 3)
    mask: Tensor    # (H, W, 1)
    id: str


@dataclass
class AugmentConfig:
    """Switches and ranges for the augmentation pipeline.

    Probabilities gate each op independently; ranges are fractions of the
    relevant extent unless stated.  The defaults are engineering choices,
    not claims about any particular training recipe.
    """

    enabled: bool = True
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    rotate_p: float = 0.3
    rotate_deg: float = 90.0
    crop_p: float = 0.2
    crop_lo: float = 0.7
    crop_hi: float = 1.0
    grid_p: float = 0.2
    grid_cells: int = 5
    grid_mag: float = 0.3
    cutout_p: float = 0.25
    cutout_lo: float = 0.05
    cutout_hi: float = 0.25
    cutmix_p: float = 0.25
    cutmix_beta: float = 1.0
    seed: int = 0

    def validate(self):
        for name in ("hflip_p", "vflip_p", "rotate_p", "crop_p", "grid_p",
                     "cutout_p", "cutmix_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"probability {name}={v} outside [0, 1]")
        if not 0.0 < self.crop_lo <= self.crop_hi <= 1.0:
            raise ConfigError(f"crop range [{self.crop_lo}, {self.crop_hi}] invalid")
        if self.grid_cells < 1 or not 0.0 <= self.grid_mag <= 0.9:
            raise ConfigError(f"grid distortion cells={self.grid_cells} "
                              f"mag={self.grid_mag} invalid")
        if not 0.0 < self.cutout_lo <= self.cutout_hi <= 1.0:
            raise ConfigError(f"cutout range [{self.cutout_lo}, {self.cutout_hi}] invalid")
        if self.cutmix_beta <= 0 or self.rotate_deg < 0:
            raise ConfigError("cutmix_beta must be positive and rotate_deg non-negative")
        return self

    @classmethod
    def none(cls):
        return cls(enabled=False)


# --- PPM / PGM codec ---------------------------------------------------------

def _read_header_tokens(buf, count, pos):
    """Parse ``count`` whitespace/comment-separated ASCII integers from ``pos``."""
    tokens = []
    while len(tokens) < count:
        if pos >= len(buf):
            raise FormatError(f"truncated header at byte offset {pos}")
        c = buf[pos:pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            nl = buf.find(b"\n", pos)
            if nl < 0:
                raise FormatError(f"unterminated comment at byte offset {pos}")
            pos = nl + 1
        elif c.isdigit():
            start = pos
            while pos < len(buf) and buf[pos:pos + 1].isdigit():
                pos += 1
            tokens.append(int(buf[start:pos]))
        else:
            raise FormatError(f"unexpected byte {c!r} at offset {pos}")
    return tokens, pos


def decode_image(path):
    """Decode a binary PPM (P6) or PGM (P5) file to a uint8 (H, W, C) grid."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic == b"P6":
        channels = 3
    elif magic == b"P5":
        channels = 1
    else:
        raise FormatError(f"bad magic {magic!r}; only binary P5/P6 supported")
    (width, height, maxval), consumed = _read_header_tokens(buf, 3, 2)
    if width < 1 or height < 1:
        raise FormatError(f"degenerate image extents {width}x{height}")
    if maxval <= 0 or maxval > 255:
        raise FormatError(f"unsupported maxval {maxval}; only 8-bit payloads")
    start = consumed + 1  # single whitespace byte after maxval
    need = width * height * channels
    payload = buf[start:start + need]
    if len(payload) != need:
        raise FormatError(f"truncated payload at byte offset {start + len(payload)}: "
                          f"need {need} bytes, have {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)


def encode_image(path, grid):
    """Write a uint8 (H, W, 1|3) grid as binary PGM/PPM."""
    arr = np.asarray(grid)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise FormatError(f"encode expects uint8 (H, W, 1|3), got {arr.dtype} {arr.shape}")
    magic = b"P6" if arr.shape[2] == 3 else b"P5"
    header = magic + f"\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


# --- resizing ---------------------------------------------------------------

def _lerp_axis(arr, out_len, axis):
    """Bilinear resample along one axis using a + f*(b - a) (exact on
    constants and at integer source positions)."""
    src_len = arr.shape[axis]
    if src_len == out_len:
        return arr
    scale = src_len / out_len
    pos = (np.arange(out_len, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, src_len - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, src_len - 1)
    frac = (pos - i0).astype(arr.dtype)
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = out_len
    f = frac.reshape(shape)
    return a + f * (b - a)


def resize_bilinear(img, out_h, out_w):
    """Separable bilinear resize of a float (H, W, C) array."""
    out = _lerp_axis(np.asarray(img), out_h, axis=0)
    return _lerp_axis(out, out_w, axis=1)


def resize_nearest(img, out_h, out_w):
    """Nearest-neighbor resize preserving exact source values."""
    arr = np.asarray(img)
    h, w = arr.shape[0], arr.shape[1]
    rows = np.minimum((((np.arange(out_h) + 0.5) * (h / out_h))).astype(np.int64), h - 1)
    cols = np.minimum((((np.arange(out_w) + 0.5) * (w / out_w))).astype(np.int64), w - 1)
    return arr[rows][:, cols]


def preprocess(raw_image, raw_mask, target_size, sample_id=""):
    """Resize and normalize one raw pair into a :class:`Sample`.

    Images are mapped by ``v / 127.5 - 1`` (0 -> -1, 255 -> +1); masks are
    nearest-resized and thresholded at 127.
    """
    if target_size % 32 != 0:
        raise ShapeError(f"target_size {target_size} must be divisible by 32")
    img = np.asarray(raw_image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"image grid must be (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise FormatError(f"degenerate image extents {img.shape}")
    dt = engine.default_dtype()
    image = resize_bilinear(img.astype(dt), target_size, target_size)
    image = image / dt(127.5) - dt(1.0)

    mask = np.asarray(raw_mask)
    if mask.ndim == 2:
        mask = mask[:, :, None]
    if mask.ndim != 3 or mask.shape[2] != 1:
        raise FormatError(f"mask grid must be (H, W, 1), got {mask.shape}")
    mask = resize_nearest(mask, target_size, target_size)
    mask = (mask > 127).astype(dt)
    return Sample(image=Tensor(image), mask=Tensor(mask), id=sample_id)


# --- dataset folders ---------------------------------------------------------

class MaskDataset:
    """Folder of ``images/<id>.ppm`` + ``masks/<id>.pgm``, matched by stem."""

    def __init__(self, root, target_size):
        self.root = root
        self.target_size = target_size
        img_dir = os.path.join(root, "images")
        mask_dir = os.path.join(root, "masks")
        if not os.path.isdir(img_dir) or not os.path.isdir(mask_dir):
            raise FormatError(f"dataset root {root!r} needs images/ and masks/ folders")
        stems = sorted(os.path.splitext(f)[0] for f in os.listdir(img_dir)
                       if f.endswith(".ppm"))
        self.ids = [s for s in stems
                    if os.path.exists(os.path.join(mask_dir, s + ".pgm"))]

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        sid = self.ids[i]
        img = decode_image(os.path.join(self.root, "images", sid + ".ppm"))
        mask = decode_image(os.path.join(self.root, "masks", sid + ".pgm"))
        return preprocess(img, mask, self.target_size, sample_id=sid)


# --- augmentation -------------------------------------------------------------

def _sample_grid(img, sy, sx, bilinear, fill):
    """Sample ``img`` at fractional source coordinates (sy, sx) per pixel."""
    h, w = img.shape[0], img.shape[1]
    if bilinear:
        inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
        ys = np.clip(sy, 0, h - 1)
        xs = np.clip(sx, 0, w - 1)
        y0 = np.floor(ys).astype(np.int64)
        x0 = np.floor(xs).astype(np.int64)
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        fy = (ys - y0).astype(img.dtype)[..., None]
        fx = (xs - x0).astype(img.dtype)[..., None]
        top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
        bot = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
        out = top + fy * (bot - top)
    else:
        yi = np.clip(np.rint(sy), 0, h - 1).astype(np.int64)
        xi = np.clip(np.rint(sx), 0, w - 1).astype(np.int64)
        inside = (sy >= -0.5) & (sy <= h - 0.5) & (sx >= -0.5) & (sx <= w - 0.5)
        out = img[yi, xi]
    out = out.copy()
    out[~inside] = fill
    return out


def _rotate(img, mask, degrees):
    h, w = img.shape[0], img.shape[1]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dy, dx = yy - cy, xx - cx
    sy = cos * dy - sin * dx + cy
    sx = sin * dy + cos * dx + cx
    return (_sample_grid(img, sy, sx, bilinear=True, fill=-1.0),
            _sample_grid(mask, sy, sx, bilinear=False, fill=0.0))


def _center_crop(img, mask, frac):
    h, w = img.shape[0], img.shape[1]
    ch = max(1, int(round(h * frac)))
    cw = max(1, int(round(w * frac)))
    top, left = (h - ch) // 2, (w - cw) // 2
    ci = img[top:top + ch, left:left + cw]
    cm = mask[top:top + ch, left:left + cw]
    return (resize_bilinear(ci, h, w).astype(img.dtype),
            resize_nearest(cm, h, w))


def _grid_maps(length, cells, mag, rng):
    """Monotone piecewise-linear coordinate map for grid distortion."""
    steps = 1.0 + rng.uniform(-mag, mag, size=cells)
    q = np.concatenate([[0.0], np.cumsum(steps)])
    q *= (length - 1) / q[-1]
    p = np.linspace(0.0, length - 1, cells + 1)
    return np.interp(np.arange(length, dtype=np.float64), q, p)


def _grid_distort(img, mask, cells, mag, rng):
    sy = _grid_maps(img.shape[0], cells, mag, rng)
    sx = _grid_maps(img.shape[1], cells, mag, rng)
    syy, sxx = np.meshgrid(sy, sx, indexing="ij")
    return (_sample_grid(img, syy, sxx, bilinear=True, fill=-1.0),
            _sample_grid(mask, syy, sxx, bilinear=False, fill=0.0))


def _rand_box(h, w, frac_h, frac_w, rng):
    bh = max(1, int(round(h * frac_h)))
    bw = max(1, int(round(w * frac_w)))
    top = int(rng.integers(0, max(h - bh, 0) + 1))
    left = int(rng.integers(0, max(w - bw, 0) + 1))
    return top, left, bh, bw


def augment(sample, cfg, rng, donor=None):
    """Apply the configured pipeline; ``donor`` feeds cutmix when present.

    ``rng`` is a ``numpy.random.Generator``; the caller owns its seeding.
    Gates and parameters are always drawn in the same order so a fixed
    generator state yields a fixed transform.
    """
    cfg.validate()
    img = sample.image.data.copy()
    mask = sample.mask.data.copy()
    if not cfg.enabled:
        return Sample(Tensor(img), Tensor(mask), sample.id)

    if rng.random() < cfg.hflip_p:
        img, mask = img[:, ::-1].copy(), mask[:, ::-1].copy()
    if rng.random() < cfg.vflip_p:
        img, mask = img[::-1].copy(), mask[::-1].copy()
    if rng.random() < cfg.rotate_p:
        deg = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg)
        img, mask = _rotate(img, mask, deg)
    if rng.random() < cfg.crop_p:
        frac = rng.uniform(cfg.crop_lo, cfg.crop_hi)
        img, mask = _center_crop(img, mask, frac)
    if rng.random() < cfg.grid_p:
        img, mask = _grid_distort(img, mask, cfg.grid_cells, cfg.grid_mag, rng)
    if rng.random() < cfg.cutout_p:
        fh = rng.uniform(cfg.cutout_lo, cfg.cutout_hi)
        fw = rng.uniform(cfg.cutout_lo, cfg.cutout_hi)
        top, left, bh, bw = _rand_box(img.shape[0], img.shape[1], fh, fw, rng)
        img[top:top + bh, left:left + bw] = 0.0
    if donor is not None and rng.random() < cfg.cutmix_p:
        lam = rng.beta(cfg.cutmix_beta, cfg.cutmix_beta)
        side = np.sqrt(1.0 - lam)
        top, left, bh, bw = _rand_box(img.shape[0], img.shape[1], side, side, rng)
        img[top:top + bh, left:left + bw] = donor.image.data[top:top + bh, left:left + bw]
        mask[top:top + bh, left:left + bw] = donor.mask.data[top:top + bh, left:left + bw]

    return Sample(Tensor(np.ascontiguousarray(img)),
                  Tensor(np.ascontiguousarray(mask)), sample.id)


def per_sample_rng(seed, epoch, index):
    """Independent stream per (seed, epoch, index); safe for parallel loads."""
    return np.random.default_rng(np.random.SeedSequence((seed, epoch, index)))


# --- synthetic polyp generator -------------------------------------------------

def _low_freq_noise(rng, size, cells, amplitude, channels):
    coarse = rng.uniform(-amplitude, amplitude, size=(cells, cells, channels))
    return resize_bilinear(coarse, size, size)


def synth_polyp_dataset(n, size, seed):
    """Deterministic desk-scale stand-in dataset.

    Each sample is a textured background with 1-3 smooth blobs (ellipses
    deformed by low-frequency radial wobble) in a distinct color; the mask
    is the exact blob support.  Foreground fraction always lands in
    [0.02, 0.5].
    """
    if size % 32 != 0:
        raise ShapeError(f"size {size} must be divisible by 32")
    rng = np.random.default_rng(seed)
    dt = engine.default_dtype()
    samples = []
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    for i in range(n):
        base = rng.uniform(-0.7, -0.1, size=3)
        img = np.tile(base, (size, size, 1))
        img += _low_freq_noise(rng, size, 6, 0.15, 3)
        img += rng.uniform(-0.03, 0.03, size=(size, size, 3))

        for _ in range(64):  # retry until fraction constraint is met
            mask = np.zeros((size, size), dtype=bool)
            for _ in range(int(rng.integers(1, 4))):
                cy = rng.uniform(0.3, 0.7) * size
                cx = rng.uniform(0.3, 0.7) * size
                a = rng.uniform(0.10, 0.20) * size
                b = rng.uniform(0.10, 0.20) * size
                phi = rng.uniform(0, np.pi)
                amp = rng.uniform(0.0, 0.12, size=3)
                pha = rng.uniform(0, 2 * np.pi, size=3)
                dy, dx = yy - cy, xx - cx
                ry = np.cos(phi) * dy - np.sin(phi) * dx
                rx = np.sin(phi) * dy + np.cos(phi) * dx
                theta = np.arctan2(ry, rx)
                wobble = 1.0 + sum(amp[k] * np.cos((k + 1) * theta + pha[k])
                                   for k in range(3))
                mask |= (ry / a) ** 2 + (rx / b) ** 2 <= wobble ** 2
            frac = mask.mean()
            if 0.02 <= frac <= 0.5:
                break
        else:
            # centered plain ellipse always lands inside the bounds
            dy, dx = yy - size / 2.0, xx - size / 2.0
            r = 0.15 * size
            mask = (dy / r) ** 2 + (dx / r) ** 2 <= 1.0

        tint = np.array([rng.uniform(0.5, 0.9),
                         rng.uniform(-0.1, 0.2),
                         rng.uniform(-0.1, 0.2)])
        blob = base + tint + _low_freq_noise(rng, size, 8, 0.1, 3)
        img = np.where(mask[:, :, None], blob, img)
        img = np.clip(img, -1.0, 1.0)

        samples.append(Sample(
            image=Tensor(img.astype(dt)),
            mask=Tensor(mask[:, :, None].astype(dt)),
            id=f"synth{i:04d}",
        ))
    return samples


def write_dataset(samples, out_dir):
    """Write samples as PPM/PGM pairs in the standard folder layout."""
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    for s in samples:
        img_u8 = np.clip(np.rint((s.image.data + 1.0) * 127.5), 0, 255).astype(np.uint8)
        mask_u8 = (s.mask.data[:, :, 0] > 0.5).astype(np.uint8) * 255
        encode_image(os.path.join(img_dir, s.id + ".ppm"), img_u8)
        encode_image(os.path.join(mask_dir, s.id + ".pgm"), mask_u8)


__all__ = [
    "AugmentConfig", "MaskDataset", "Sample", "augment", "decode_image",
    "encode_image", "per_sample_rng", "preprocess", "resize_bilinear",
    "resize_nearest", "synth_polyp_dataset", "write_dataset",
]
