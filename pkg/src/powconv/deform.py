"""Image deformations for robustness benchmarks, plus PPM/PNG image I/O.

Images are float arrays of shape ``[H, W, 3]`` with values in ``[0, 1]``.
Every generator returns a new clamped array and is a pure function of its
arguments: the same image, parameters and seed give bit-identical output.
Resampling (rotation, warp, patch rescaling) is bilinear with edge
replication.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft, ndimage

from . import _font
from .errors import ConfigurationError, DataError, DimensionError
from .synthdata import substream

log = logging.getLogger(__name__)

MAX_ANGLE = 15.0
MIN_PATCH_FRACTION = 1.0 / 64.0
MAX_SALT_RATE = 0.2
WARP_ATTEMPTS = 8


def _check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError(f"expected an [H, W, 3] image, got shape {img.shape}")
    return img


def _finish(img):
    return np.clip(img, 0.0, 1.0)


# --------------------------------------------------------------------------
# image I/O
# --------------------------------------------------------------------------

def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _ppm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PPM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _ppm_tokens(data, 4)
    if magic != b"P6":
        raise DataError(f"{path}: not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise DataError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    if len(data) - pos < h * w * 3:
        raise DataError(f"{path}: truncated raster ({len(data) - pos} of {h * w * 3} bytes)")
    raster = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    return raster.reshape(h, w, 3).astype(np.float64) / maxval


def write_ppm(path, img) -> None:
    img = _check_image(img)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + to_uint8(img).tobytes())


def read_image(path) -> np.ndarray:
    """PPM natively; anything else through Pillow if it is installed."""
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm(path)
    try:
        from PIL import Image as PILImage
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ConfigurationError(f"reading {path.suffix} needs Pillow") from exc
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_image(path, img) -> None:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        write_ppm(path, img)
        return
    try:
        from PIL import Image as PILImage
    except ImportError as exc:  # pragma: no cover
        raise ConfigurationError(f"writing {path.suffix} needs Pillow") from exc
    PILImage.fromarray(to_uint8(_check_image(img))).save(path)


# --------------------------------------------------------------------------
# geometric deformations
# --------------------------------------------------------------------------

def _sample(img, rows, cols):
    """Bilinear lookup at fractional ``(rows, cols)``; edges replicate."""
    coords = np.stack([rows, cols])
    return np.stack([ndimage.map_coordinates(img[..., ch], coords, order=1, mode="nearest")
                     for ch in range(3)], axis=-1)


def rotate(img, angle: float) -> np.ndarray:
    """Rotate by ``angle`` degrees (counter-clockwise) about the image centre."""
    img = _check_image(img)
    if abs(angle) > MAX_ANGLE:
        raise ConfigurationError(f"rotation angle must be within +-{MAX_ANGLE} degrees, got {angle}")
    if angle == 0:
        return img.copy()
    h, w, _ = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    r, c = np.mgrid[0:h, 0:w].astype(np.float64)
    t = math.radians(angle)
    # inverse map: output pixel -> source pixel (y axis points down)
    dy, dx = r - cy, c - cx
    src_c = cx + math.cos(t) * dx - math.sin(t) * dy
    src_r = cy + math.sin(t) * dx + math.cos(t) * dy
    return _finish(_sample(img, src_r, src_c))


def homography(src, dst) -> np.ndarray:
    """3x3 matrix mapping four ``(x, y)`` points in ``src`` onto ``dst`` (DLT)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    H = vt[-1].reshape(3, 3)
    return H / H[2, 2]


def _degenerate(points, tol=1e-6) -> bool:
    """True if any three of the points are (nearly) collinear."""
    p = np.asarray(points)
    for i in range(4):
        a, b, c = (p[j] for j in range(4) if j != i)
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area < tol:
            return True
    return False


def _corners(h, w):
    return np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)


def perspective_warp(img, seed: int = 0, bound: float = 0.2, return_points=False):
    """Projective warp sending the four corners to seeded base pixels.

    Each base pixel is its corner moved inwards by up to ``bound`` times the
    image width/height along each axis, so ``bound < 0.5`` keeps all four in
    frame and in their own quadrant.  ``bound = 0`` is the identity.
    Returns the image, or ``(image, base_points)`` with ``(x, y)`` rows in
    corner order TL, TR, BR, BL.
    """
    img = _check_image(img)
    if not 0 <= bound < 0.5:
        raise ConfigurationError(f"displacement bound must be in [0, 0.5), got {bound}")
    h, w, _ = img.shape
    corners = _corners(h, w)
    if bound == 0 or h < 2 or w < 2:
        return (img.copy(), corners) if return_points else img.copy()
    rng = substream(seed, "perspective")
    inward = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.float64)
    for _ in range(WARP_ATTEMPTS):
        shift = rng.uniform(0.0, bound, (4, 2)) * [w - 1, h - 1]
        points = corners + inward * shift
        if not _degenerate(points):
            break
    else:
        raise ConfigurationError(f"no non-degenerate base pixels after {WARP_ATTEMPTS} draws")
    if np.array_equal(points, corners):
        out = img.copy()
    else:
        inv = homography(points, corners)  # output pixel -> source pixel
        r, c = np.mgrid[0:h, 0:w].astype(np.float64)
        q = inv @ np.stack([c.ravel(), r.ravel(), np.ones(h * w)])
        src_c = (q[0] / q[2]).reshape(h, w)
        src_r = (q[1] / q[2]).reshape(h, w)
        out = _finish(_sample(img, src_r, src_c))
    return (out, points) if return_points else out


# --------------------------------------------------------------------------
# photometric deformations
# --------------------------------------------------------------------------

def gaussian_kernel(sigma: float, size: int = 5) -> np.ndarray:
    if not sigma > 0:
        raise ConfigurationError(f"blur sigma must be positive, got {sigma}")
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur(img, sigma: float = 1.5) -> np.ndarray:
    img = _check_image(img)
    k = gaussian_kernel(sigma)
    out = np.stack([ndimage.correlate(img[..., ch], k, mode="nearest") for ch in range(3)], axis=-1)
    return _finish(out)


# Annex K base tables, row-major
_Q_LUMA = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99], dtype=np.float64).reshape(8, 8)
_Q_CHROMA = np.array([
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99], dtype=np.float64).reshape(8, 8)


def quant_table(base, quality: int) -> np.ndarray:
    """Scale a base table the way the IJG encoder does."""
    if not 1 <= quality <= 100:
        raise ConfigurationError(f"quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * scale + 50.0) / 100.0), 1, 255)


def _blockwise(plane, q):
    """Forward DCT, quantise, dequantise, inverse DCT on 8x8 blocks.

    The DC term is kept exact so flat regions keep their colour at any quality.
    """
    h, w = plane.shape
    blocks = plane.reshape(h // 8, 8, w // 8, 8)
    coef = fft.dctn(blocks, type=2, axes=(1, 3), norm="ortho")
    dc = coef[:, 0, :, 0].copy()
    coef = np.round(coef / q[None, :, None, :]) * q[None, :, None, :]
    coef[:, 0, :, 0] = dc
    return fft.idctn(coef, type=2, axes=(1, 3), norm="ortho").reshape(h, w)


def _upsample2(plane):
    """Double both axes, interpolating at the full-resolution pixel centres."""
    h, w = plane.shape
    rows = (np.arange(2 * h) + 0.5) / 2.0 - 0.5
    cols = (np.arange(2 * w) + 0.5) / 2.0 - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(plane, np.stack([rr, cc]), order=1, mode="nearest")


def jpeg_like_compress(img, quality: int = 10) -> np.ndarray:
    """Round trip through the lossy part of baseline JPEG (4:2:0, no entropy coding, exact DC)."""
    img = _check_image(img)
    ql, qc = quant_table(_Q_LUMA, quality), quant_table(_Q_CHROMA, quality)
    h, w, _ = img.shape
    ph, pw = -h % 16, -w % 16
    rgb = np.pad(to_uint8(img).astype(np.float64), ((0, ph), (0, pw), (0, 0)), mode="edge")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    H, W = y.shape

    def down(c):
        return c.reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))

    def up(c):  # triangle filter, as decoders' "fancy" upsampling
        return _upsample2(_blockwise(down(c) - 128.0, qc) + 128.0)

    y = _blockwise(y - 128.0, ql) + 128.0
    cb, cr = up(cb) - 128.0, up(cr) - 128.0
    out = np.stack([y + 1.402 * cr,
                    y - 0.344136 * cb - 0.714136 * cr,
                    y + 1.772 * cb], axis=-1)
    out = np.round(np.clip(out, 0, 255))[:h, :w]
    return out / 255.0


def salt_pepper(img, rate: float = 0.1, sigma: float = 0.5, seed: int = 0) -> np.ndarray:
    """Replace a ``rate`` fraction of pixels by ``0.5 + N(0, sigma^2)`` per channel."""
    img = _check_image(img)
    if not 0 <= rate <= MAX_SALT_RATE:
        raise ConfigurationError(f"salt-and-pepper rate must be in [0, {MAX_SALT_RATE}], got {rate}")
    out = img.copy()
    h, w, _ = img.shape
    n = int(round(rate * h * w))
    if n == 0:
        return out
    rng = substream(seed, "salt-pepper")
    idx = rng.choice(h * w, size=n, replace=False)
    values = np.clip(0.5 + sigma * rng.standard_normal((n, 3)), 0.0, 1.0)
    out.reshape(-1, 3)[idx] = values
    return out


def random_noise(img, sigma: float = 0.1, seed: int = 0) -> np.ndarray:
    """Additive Laplace noise of scale ``sigma`` on every pixel and channel."""
    img = _check_image(img)
    if sigma < 0:
        raise ConfigurationError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = substream(seed, "random-noise")
    return _finish(img + rng.laplace(0.0, sigma, img.shape))


def structured_noise(img, sigma: float = 0.1, seed: int = 0) -> np.ndarray:
    """Laplace noise on even-indexed rows only; odd rows are copied unchanged."""
    img = _check_image(img)
    if sigma < 0:
        raise ConfigurationError(f"noise sigma must be >= 0, got {sigma}")
    out = img.copy()
    if sigma == 0:
        return out
    rng = substream(seed, "structured-noise")
    rows = out[0::2]
    out[0::2] = np.clip(rows + rng.laplace(0.0, sigma, rows.shape), 0.0, 1.0)
    return out


# --------------------------------------------------------------------------
# occlusions
# --------------------------------------------------------------------------

def inpaint_strings(img, transparency: float = 0.3, seed: int = 0,
                    coverage=(0.05, 0.25), max_strings: int = 200, return_mask=False):
    """Overlay random 5x7 bitmap strings until the covered area reaches a seeded target.

    The target fraction is drawn uniformly from ``coverage``.  A string that
    would push the covered area past the upper end is skipped.  Covered
    pixels become ``(1 - t) * colour + t * img``.
    """
    img = _check_image(img)
    if not 0 <= transparency <= 1:
        raise ConfigurationError(f"transparency must be in [0, 1], got {transparency}")
    lo, hi = coverage
    if not 0 <= lo <= hi <= 1:
        raise ConfigurationError(f"bad coverage band {coverage}")
    h, w, _ = img.shape
    rng = substream(seed, "inpaint")
    target = rng.uniform(lo, hi)
    mask = np.zeros((h, w), dtype=bool)
    colour = np.zeros((h, w, 3))
    max_scale = max(1, min(h, w) // 40)
    for _ in range(max_strings):
        if mask.mean() >= target:
            break
        n_chars = int(rng.integers(3, 9))
        text = "".join(rng.choice(list(_font.CHARSET), n_chars))
        glyph = _font.render(text, int(rng.integers(1, max_scale + 1)))
        top = int(rng.integers(-glyph.shape[0] // 2, h))
        left = int(rng.integers(-glyph.shape[1] // 2, w))
        rgb = rng.uniform(0.0, 1.0, 3)
        # clip the glyph box to the frame
        r0, c0 = max(top, 0), max(left, 0)
        r1, c1 = min(top + glyph.shape[0], h), min(left + glyph.shape[1], w)
        if r0 >= r1 or c0 >= c1:
            continue
        piece = glyph[r0 - top:r1 - top, c0 - left:c1 - left]
        trial = mask.copy()
        trial[r0:r1, c0:c1] |= piece
        if trial.mean() > hi:
            continue
        mask = trial
        colour[r0:r1, c0:c1][piece] = rgb
    out = img.copy()
    if transparency < 1:
        out[mask] = (1.0 - transparency) * colour[mask] + transparency * img[mask]
    out = _finish(out)
    return (out, mask) if return_mask else out


def _resize(img, h, w):
    """Bilinear resize to ``h x w`` with pixel-centre alignment."""
    sh, sw, _ = img.shape
    rows = (np.arange(h) + 0.5) * sh / h - 0.5
    cols = (np.arange(w) + 0.5) * sw / w - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return _sample(img, rr, cc)


def patch_box(h, w, fraction, rng):
    """Seeded ``(top, left, height, width)`` with area >= ``fraction * h * w``."""
    area = math.ceil(fraction * h * w)
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))  # height / width
    ph = min(max(math.ceil(math.sqrt(area * aspect)), 1), h)
    pw = min(max(math.ceil(area / ph), 1), w)
    if ph * pw < area:
        ph = min(math.ceil(area / pw), h)
    top = int(rng.integers(0, h - ph + 1))
    left = int(rng.integers(0, w - pw + 1))
    return top, left, ph, pw


def patch_occlude(img, donors, fraction: float = 1.0 / 16.0, seed: int = 0, return_box=False):
    """Paste a rescaled random crop of a seeded donor over a seeded rectangle."""
    img = _check_image(img)
    donors = list(donors)
    if not donors:
        raise ConfigurationError("patch occlusion needs at least one donor image")
    if not MIN_PATCH_FRACTION <= fraction <= 1:
        raise ConfigurationError(f"patch fraction must be in [1/64, 1], got {fraction}")
    h, w, _ = img.shape
    rng = substream(seed, "patch")
    top, left, ph, pw = patch_box(h, w, fraction, rng)
    donor = _check_image(donors[int(rng.integers(len(donors)))])
    dh, dw, _ = donor.shape
    ch = int(rng.integers(max(1, dh // 4), dh + 1))
    cw = int(rng.integers(max(1, dw // 4), dw + 1))
    cr = int(rng.integers(0, dh - ch + 1))
    cc = int(rng.integers(0, dw - cw + 1))
    crop = donor[cr:cr + ch, cc:cc + cw]
    out = img.copy()
    out[top:top + ph, left:left + pw] = _finish(_resize(crop, ph, pw))
    box = (top, left, ph, pw)
    return (out, box) if return_box else out


def saliency_map(net, img, class_id: int) -> np.ndarray:
    """``|d logit / d pixel|``, max over channels, scaled so the maximum is 1."""
    img = _check_image(img)
    x = img.transpose(2, 0, 1)[None]
    logits = net.forward(x, train=False)
    n_classes = logits.shape[1]
    if not 0 <= class_id < n_classes:
        raise DataError(f"class id {class_id} outside [0, {n_classes})")
    seed_grad = np.zeros_like(logits)
    seed_grad[0, class_id] = 1.0
    grad = net.backward(seed_grad)[0]
    sal = np.abs(grad).max(axis=0)
    top = sal.max()
    if top == 0:
        log.warning("saliency map is identically zero")
        return sal
    return sal / top


def nms_centres(saliency, count: int, radius: float):
    """Greedy maxima: take the largest value, suppress its disc, repeat."""
    sal = np.array(saliency, dtype=np.float64)
    h, w = sal.shape
    rr, cc = np.mgrid[0:h, 0:w]
    centres = []
    alive = np.ones_like(sal, dtype=bool)
    for _ in range(count):
        if not alive.any():
            break
        flat = np.where(alive, sal, -np.inf).argmax()
        r, c = divmod(int(flat), w)
        centres.append((r, c))
        alive &= (rr - r) ** 2 + (cc - c) ** 2 > radius ** 2
    return centres


def disc_mask(shape, centres, radius: float) -> np.ndarray:
    h, w = shape
    rr, cc = np.mgrid[0:h, 0:w]
    mask = np.zeros((h, w), dtype=bool)
    for r, c in centres:
        mask |= (rr - r) ** 2 + (cc - c) ** 2 <= radius ** 2
    return mask


def targeted_occlude(img, saliency, mask: str = "black", count: int = 3,
                     radius: float = 3.0, seed: int = 0, return_centres=False):
    """Fill discs around the strongest saliency clusters with black or uniform noise."""
    img = _check_image(img)
    saliency = np.asarray(saliency)
    if saliency.shape != img.shape[:2]:
        raise DimensionError(f"saliency shape {saliency.shape} does not match image {img.shape[:2]}")
    if mask not in ("black", "noise"):
        raise ConfigurationError(f"mask type must be 'black' or 'noise', got {mask!r}")
    if count < 0 or radius < 0:
        raise ConfigurationError("cluster count and radius must be >= 0")
    centres = nms_centres(saliency, count, radius)
    out = img.copy()
    if centres:
        m = disc_mask(saliency.shape, centres, radius)
        if mask == "black":
            out[m] = 0.0
        else:
            out[m] = substream(seed, "targeted").uniform(0.0, 1.0, (int(m.sum()), 3))
    return (out, centres) if return_centres else out


# --------------------------------------------------------------------------
# specs, dispatch and manifests
# --------------------------------------------------------------------------

DEFAULTS = {
    "Identity": {},
    "Rotation": {"angle": 10.0},
    "Perspective": {"bound": 0.2},
    "Blur": {"sigma": 1.5},
    "JpegLike": {"quality": 10},
    "SaltPepper": {"rate": 0.1, "sigma": 0.5},
    "RandomNoise": {"sigma": 0.1},
    "StructuredNoise": {"sigma": 0.1},
    "InPaint": {"transparency": 0.3},
    "PatchOcclude": {"fraction": 1.0 / 16.0},
    "TargetedOcclude": {"mask": "black", "count": 3, "radius": 3.0},
}
KINDS = tuple(DEFAULTS)


@dataclass
class DeformSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DEFAULTS:
            raise ConfigurationError(f"unknown deformation kind {self.kind!r}")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ConfigurationError(f"{self.kind} does not take {sorted(unknown)}")
        merged = dict(DEFAULTS[self.kind])
        for key, value in self.params.items():
            default = merged[key]
            merged[key] = value if isinstance(default, str) else type(default)(float(value))
        self.params = merged
        p = merged
        if self.kind == "Rotation" and abs(p["angle"]) > MAX_ANGLE:
            raise ConfigurationError(f"rotation angle must be within +-{MAX_ANGLE}")
        if self.kind == "SaltPepper" and not 0 <= p["rate"] <= MAX_SALT_RATE:
            raise ConfigurationError(f"salt-and-pepper rate must be in [0, {MAX_SALT_RATE}]")
        if self.kind == "PatchOcclude" and not MIN_PATCH_FRACTION <= p["fraction"] <= 1:
            raise ConfigurationError("patch fraction must be in [1/64, 1]")

    def param_string(self) -> str:
        return ",".join(f"{k}={v}" for k, v in self.params.items())


def apply(img, spec: DeformSpec, donors=None, net=None, class_id=None) -> np.ndarray:
    """Run one deformation.  ``donors`` feed patch occlusion; ``net`` and
    ``class_id`` feed the saliency map for targeted occlusion."""
    p, s = spec.params, spec.seed
    k = spec.kind
    if k == "Identity":
        return _check_image(img).copy()
    if k == "Rotation":
        return rotate(img, p["angle"])
    if k == "Perspective":
        return perspective_warp(img, s, p["bound"])
    if k == "Blur":
        return gaussian_blur(img, p["sigma"])
    if k == "JpegLike":
        return jpeg_like_compress(img, p["quality"])
    if k == "SaltPepper":
        return salt_pepper(img, p["rate"], p["sigma"], s)
    if k == "RandomNoise":
        return random_noise(img, p["sigma"], s)
    if k == "StructuredNoise":
        return structured_noise(img, p["sigma"], s)
    if k == "InPaint":
        return inpaint_strings(img, p["transparency"], s)
    if k == "PatchOcclude":
        if not donors:
            raise ConfigurationError("PatchOcclude needs donor images")
        return patch_occlude(img, donors, p["fraction"], s)
    if p["count"] == 0:
        return img.copy()
    if net is None or class_id is None:
        raise ConfigurationError("TargetedOcclude needs a network and a class id")
    sal = saliency_map(net, img, class_id)
    return targeted_occlude(img, sal, p["mask"], p["count"], p["radius"], s)


def parse_chain(kind: str, params: str, seed: int):
    """Parse ``"Blur+SaltPepper"`` with ``"Blur.sigma=1,SaltPepper.rate=0.1"``.

    Single kinds may use bare keys.  Stage ``i`` of a chain uses seed
    ``seed + i`` so two stages of the same kind do not repeat their noise.
    """
    kinds = kind.split("+")
    per = {k: {} for k in kinds}
    for item in filter(None, (t.strip() for t in params.split(","))):
        if "=" not in item:
            raise ConfigurationError(f"bad parameter {item!r}; expected key=value")
        key, value = item.split("=", 1)
        if "." in key:
            owner, key = key.split(".", 1)
            if owner not in per:
                raise ConfigurationError(f"parameter for {owner!r}, which is not in {kind!r}")
        elif len(kinds) == 1:
            owner = kinds[0]
        else:
            raise ConfigurationError(f"chained spec needs Kind.key parameters, got {item!r}")
        per[owner][key] = value
    return [DeformSpec(k, per[k], seed + i) for i, k in enumerate(kinds)]


def apply_chain(img, specs, **context) -> np.ndarray:
    for spec in specs:
        img = apply(img, spec, **context)
    return img


MANIFEST_FIELDS = ("input", "kind", "params", "seed", "output")


@dataclass
class ManifestEntry:
    input: str
    kind: str
    params: str
    seed: int
    output: str

    @property
    def specs(self):
        return parse_chain(self.kind, self.params, self.seed)


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for e in entries:
            writer.writerow([e.input, e.kind, e.params, e.seed, e.output])


def read_manifest(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != MANIFEST_FIELDS:
        raise DataError(f"{path}: header must be {'/'.join(MANIFEST_FIELDS)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_FIELDS):
            raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields")
        entries.append(ManifestEntry(row[0], row[1], row[2], int(row[3]), row[4]))
    return entries
