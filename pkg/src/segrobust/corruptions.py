"""Fifteen deterministic image corruptions at five severity levels.

Kinds are grouped Noise / Blur / Weather / Lighting / Spatial and appear
everywhere in that fixed table order. Severity 0 is the identity for
every kind. All randomness comes from counter-based generators keyed by
(seed, kind, severity, stage), so outputs never depend on evaluation
order or worker count.

Severity parameters live in data/severity_table.txt, which is the
normative definition of the levels; frost uses a procedural fractal
occlusion layer (no photographic assets) and JPEG is an in-repo 8x8
DCT + quantization round trip.
"""

from dataclasses import dataclass
from enum import Enum
from importlib import resources

import numpy as np

from .errors import DataError, UsageError
from .numerics import as_tensor, bilinear_resize, nearest_resize
from .rng import keyed_rng, stable_key


class CorruptionKind(Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    SHOT_NOISE = "shot_noise"
    IMPULSE_NOISE = "impulse_noise"
    DEFOCUS_BLUR = "defocus_blur"
    GLASS_BLUR = "glass_blur"
    MOTION_BLUR = "motion_blur"
    ZOOM_BLUR = "zoom_blur"
    SNOW = "snow"
    FROST = "frost"
    FOG = "fog"
    BRIGHTNESS = "brightness"
    CONTRAST = "contrast"
    ELASTIC = "elastic"
    PIXELATE = "pixelate"
    JPEG = "jpeg"


# Table order == enum definition order; groups partition it.
GROUPS = {
    "Noise": [CorruptionKind.GAUSSIAN_NOISE, CorruptionKind.SHOT_NOISE,
              CorruptionKind.IMPULSE_NOISE],
    "Blur": [CorruptionKind.DEFOCUS_BLUR, CorruptionKind.GLASS_BLUR,
             CorruptionKind.MOTION_BLUR, CorruptionKind.ZOOM_BLUR],
    "Weather": [CorruptionKind.SNOW, CorruptionKind.FROST, CorruptionKind.FOG],
    "Lighting": [CorruptionKind.BRIGHTNESS, CorruptionKind.CONTRAST],
    "Spatial": [CorruptionKind.ELASTIC, CorruptionKind.PIXELATE, CorruptionKind.JPEG],
}

GROUP_OF = {kind: group for group, kinds in GROUPS.items() for kind in kinds}

SHORT_NAME = {
    CorruptionKind.GAUSSIAN_NOISE: "Gaus.", CorruptionKind.SHOT_NOISE: "Sh.",
    CorruptionKind.IMPULSE_NOISE: "Imp.", CorruptionKind.DEFOCUS_BLUR: "Dfc.",
    CorruptionKind.GLASS_BLUR: "Gls.", CorruptionKind.MOTION_BLUR: "Mtn.",
    CorruptionKind.ZOOM_BLUR: "Zm.", CorruptionKind.SNOW: "Sno.",
    CorruptionKind.FROST: "Frs.", CorruptionKind.FOG: "Fog",
    CorruptionKind.BRIGHTNESS: "Bri.", CorruptionKind.CONTRAST: "Cnt.",
    CorruptionKind.ELASTIC: "Ela.", CorruptionKind.PIXELATE: "Pix.",
    CorruptionKind.JPEG: "JPEG",
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind
    severity: int
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.severity <= 5:
            raise UsageError(f"severity must be in 0..5, got {self.severity}")


# ---------------------------------------------------------------------------
# Severity table


class SeverityTable:
    """Per-kind parameter lists; severity-indexed entries have 5 values."""

    def __init__(self, params: dict):
        self.params = params

    def get(self, kind: CorruptionKind, param: str, severity: int) -> float:
        try:
            values = self.params[kind.value][param]
        except KeyError:
            raise DataError(f"severity table has no entry {kind.value}.{param}") from None
        return values[severity - 1] if len(values) == 5 else values[0]

    def at(self, kind: CorruptionKind, severity: int) -> dict:
        """All parameters of one kind resolved at one severity."""
        if kind.value not in self.params:
            raise DataError(f"severity table has no section for {kind.value}")
        return {p: self.get(kind, p, severity) for p in self.params[kind.value]}


def parse_severity_table(text: str) -> SeverityTable:
    params: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line or "." not in line.split("=", 1)[0]:
            raise DataError(f"severity table line {lineno}: expected 'kind.param = values'")
        key, _, rhs = line.partition("=")
        kind_name, _, param = key.strip().partition(".")
        try:
            values = tuple(float(v) for v in rhs.split())
        except ValueError:
            raise DataError(f"severity table line {lineno}: non-numeric value") from None
        if len(values) not in (1, 5):
            raise DataError(f"severity table line {lineno}: need 1 or 5 values, "
                            f"got {len(values)}")
        params.setdefault(kind_name, {})[param] = values
    return SeverityTable(params)


_default_table: SeverityTable | None = None


def default_severity_table() -> SeverityTable:
    global _default_table
    if _default_table is None:
        text = resources.files("segrobust").joinpath("data/severity_table.txt").read_text()
        _default_table = parse_severity_table(text)
    return _default_table


# ---------------------------------------------------------------------------
# Shared helpers


def _check_image(image: np.ndarray) -> np.ndarray:
    image = as_tensor(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise UsageError(f"corrupt expects an (H,W,3) image, got {image.shape}")
    return image


def _gaussian_kernel1d(sigma: float) -> np.ndarray:
    r = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-xs * xs / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    """1-D correlation along `axis` with reflect padding."""
    r = len(k) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=axis)
    return win @ k


def gaussian_blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of an (H,W) or (H,W,C) array."""
    if sigma <= 0:
        return arr.copy()
    k = _gaussian_kernel1d(sigma)
    return _convolve_axis(_convolve_axis(arr, k, 0), k, 1)


def _filter2d(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D correlation with reflect padding, same kernel on every channel."""
    kh, kw = kernel.shape
    pad = [(kh // 2, kh // 2), (kw // 2, kw // 2)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img, pad, mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    return np.einsum("...ij,ij->...", win, kernel)


def _disk_kernel(radius: float, alias_sigma: float) -> np.ndarray:
    r = int(np.ceil(radius))
    ys, xs = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    disk = (ys * ys + xs * xs <= radius * radius).astype(np.float64)
    disk = gaussian_blur(disk, alias_sigma)
    return disk / disk.sum()


def _line_kernel(radius: int, angle_deg: float) -> np.ndarray:
    n = 2 * radius + 1
    k = np.zeros((n, n))
    theta = np.deg2rad(angle_deg)
    for t in np.linspace(-radius, radius, 4 * radius + 3):
        y = radius + t * np.sin(theta)
        x = radius + t * np.cos(theta)
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                yy, xx = y0 + dy, x0 + dx
                if 0 <= yy < n and 0 <= xx < n:
                    k[yy, xx] += wy * wx
    return k / k.sum()


def _center_zoom(arr: np.ndarray, zoom: float) -> np.ndarray:
    """Zoom about the center keeping the original size."""
    h, w = arr.shape[:2]
    ch, cw = max(1, int(round(h / zoom))), max(1, int(round(w / zoom)))
    y0, x0 = (h - ch) // 2, (w - cw) // 2
    return bilinear_resize(arr[y0:y0 + ch, x0:x0 + cw], h, w)


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _gray(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def plasma_fractal(h: int, w: int, rng: np.random.Generator,
                   decay: float = 2.0) -> np.ndarray:
    """Diamond-square height map in [0,1] (torus topology)."""
    n = 1
    while n < max(h, w):
        n *= 2
    arr = np.zeros((n, n))
    step, wibble = n, 100.0

    def wibbled(vals):
        return vals / 4.0 + rng.uniform(-wibble, wibble, vals.shape)

    while step >= 2:
        half = step // 2
        corners = arr[0:n:step, 0:n:step]
        sq = corners + np.roll(corners, -1, 0)
        sq += np.roll(sq, -1, 1)
        arr[half::step, half::step] = wibbled(sq)
        dr = arr[half::step, half::step]
        ul = arr[0:n:step, 0:n:step]
        arr[0:n:step, half::step] = wibbled(dr + np.roll(dr, 1, 0) + ul + np.roll(ul, -1, 1))
        arr[half::step, 0:n:step] = wibbled(dr + np.roll(dr, 1, 1) + ul + np.roll(ul, -1, 0))
        step //= 2
        wibble /= decay
    arr -= arr.min()
    peak = arr.max()
    return (arr / peak if peak > 0 else arr)[:h, :w]


# ---------------------------------------------------------------------------
# Kernels (each takes the clean image, resolved parameters, rng factory)


def _gaussian_noise(img, p, rngs):
    return img + p["sigma"] * rngs("noise").standard_normal(img.shape)


def _shot_noise(img, p, rngs):
    lam = p["rate"]
    return rngs("poisson").poisson(img * lam) / lam


def _impulse_noise(img, p, rngs):
    rng = rngs("impulse")
    h, w = img.shape[:2]
    hit = rng.random((h, w)) < p["amount"]
    salt = rng.random((h, w)) < 0.5
    out = img.copy()
    out[hit & salt] = 1.0
    out[hit & ~salt] = 0.0
    return out


def _defocus_blur(img, p, rngs):
    return _filter2d(img, _disk_kernel(p["radius"], p["alias_sigma"]))


def _glass_blur(img, p, rngs):
    rng = rngs("shuffle")
    sigma, delta = p["sigma"], int(p["max_delta"])
    iters = int(p["iterations"])
    x = gaussian_blur(img, sigma)
    h, w = x.shape[:2]
    offsets = rng.integers(-delta, delta + 1, size=(iters, h - 2 * delta, w - 2 * delta, 2))
    for it in range(iters):
        for i, y in enumerate(range(h - delta - 1, delta - 1, -1)):
            for j, xx in enumerate(range(w - delta - 1, delta - 1, -1)):
                dy, dx = offsets[it, i, j]
                yp, xp = y + dy, xx + dx
                x[y, xx], x[yp, xp] = x[yp, xp].copy(), x[y, xx].copy()
    return gaussian_blur(x, sigma)


def _motion_blur(img, p, rngs):
    angle = rngs("angle").uniform(-45.0, 45.0)
    return _filter2d(img, _line_kernel(int(p["radius"]), angle))


def _zoom_blur(img, p, rngs):
    zooms = np.arange(1.0 + p["step"], p["max_zoom"] + 1e-9, p["step"])
    out = img.copy()
    for z in zooms:
        out += _center_zoom(img, z)
    return out / (len(zooms) + 1.0)


def _snow(img, p, rngs):
    h, w = img.shape[:2]
    layer = rngs("flakes").normal(p["loc"], 0.3, size=(h, w))
    layer = _center_zoom(layer, p["zoom"])
    layer[layer < p["threshold"]] = 0.0
    layer = np.clip(layer, 0.0, 1.0)
    angle = rngs("angle").uniform(-135.0, -45.0)
    layer = _filter2d(layer, _line_kernel(int(p["blur_radius"]), angle))
    blend = p["blend"]
    whitened = np.maximum(img, (_gray(img) * 1.5 + 0.5)[..., None])
    x = blend * img + (1.0 - blend) * whitened
    return x + layer[..., None] + layer[::-1, ::-1, None]


def _frost(img, p, rngs):
    h, w = img.shape[:2]
    plasma = plasma_fractal(h, w, rngs("plasma"), decay=1.8)
    crystals = np.clip((plasma - 0.55) / 0.45, 0.0, 1.0) ** 0.8
    tint = np.array([0.90, 0.95, 1.00])
    return p["image_weight"] * img + p["frost_weight"] * crystals[..., None] * tint


def _fog(img, p, rngs):
    h, w = img.shape[:2]
    plasma = plasma_fractal(h, w, rngs("plasma"), decay=p["decay"])
    peak = img.max()
    return (img + p["amount"] * plasma[..., None]) * peak / (peak + p["amount"])


def _brightness(img, p, rngs):
    return img + p["shift"]


def _contrast(img, p, rngs):
    means = img.mean(axis=(0, 1), keepdims=True)
    return (img - means) * p["scale"] + means


def _elastic(img, p, rngs):
    rng = rngs("field")
    h, w = img.shape[:2]
    dy = gaussian_blur(rng.uniform(-1, 1, (h, w)), p["sigma"]) * p["alpha"]
    dx = gaussian_blur(rng.uniform(-1, 1, (h, w)), p["sigma"]) * p["alpha"]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return _bilinear_sample(img, ys + dy, xs + dx)


def _pixelate(img, p, rngs):
    h, w = img.shape[:2]
    f = p["factor"]
    small = bilinear_resize(img, max(1, int(h * f)), max(1, int(w * f)))
    return nearest_resize(small, h, w)


# ---------------------------------------------------------------------------
# JPEG round trip (8x8 DCT + quantization, 4:4:4, no entropy coding)

_DCT8 = np.array([[np.sqrt((1 if k == 0 else 2) / 8.0)
                   * np.cos((2 * n + 1) * k * np.pi / 16.0)
                   for n in range(8)] for k in range(8)])

_QUANT_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99]], dtype=np.float64)

_QUANT_CHROMA = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99]], dtype=np.float64)


def _scaled_qtable(base: np.ndarray, quality: float) -> np.ndarray:
    q = min(max(quality, 1.0), 100.0)
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    return np.clip(np.floor((base * scale + 50.0) / 100.0), 1.0, 255.0)


def _rgb_to_ycbcr(rgb255):
    r, g, b = rgb255[..., 0], rgb255[..., 1], rgb255[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _dct_roundtrip(channel: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    blocks = channel.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)
    coef = np.einsum("ab,ijbc,dc->ijad", _DCT8, blocks - 128.0, _DCT8)
    coef = np.round(coef / qtable) * qtable
    blocks = np.einsum("ba,ijbc,cd->ijad", _DCT8, coef, _DCT8) + 128.0
    return blocks.transpose(0, 2, 1, 3).reshape(h, w)


def jpeg_roundtrip(img: np.ndarray, quality: float) -> np.ndarray:
    """Encode/decode an (H,W,3) [0,1] image through quantized 8x8 DCTs."""
    img = _check_image(img)
    h, w = img.shape[:2]
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    ycc = _rgb_to_ycbcr(np.rint(np.clip(padded, 0, 1) * 255.0))
    out = np.empty_like(ycc)
    for c, base in ((0, _QUANT_LUMA), (1, _QUANT_CHROMA), (2, _QUANT_CHROMA)):
        out[..., c] = _dct_roundtrip(ycc[..., c], _scaled_qtable(base, quality))
    rgb = _ycbcr_to_rgb(out)[:h, :w] / 255.0
    return np.clip(rgb, 0.0, 1.0)


def _jpeg(img, p, rngs):
    return jpeg_roundtrip(img, p["quality"])


_KERNELS = {
    CorruptionKind.GAUSSIAN_NOISE: _gaussian_noise,
    CorruptionKind.SHOT_NOISE: _shot_noise,
    CorruptionKind.IMPULSE_NOISE: _impulse_noise,
    CorruptionKind.DEFOCUS_BLUR: _defocus_blur,
    CorruptionKind.GLASS_BLUR: _glass_blur,
    CorruptionKind.MOTION_BLUR: _motion_blur,
    CorruptionKind.ZOOM_BLUR: _zoom_blur,
    CorruptionKind.SNOW: _snow,
    CorruptionKind.FROST: _frost,
    CorruptionKind.FOG: _fog,
    CorruptionKind.BRIGHTNESS: _brightness,
    CorruptionKind.CONTRAST: _contrast,
    CorruptionKind.ELASTIC: _elastic,
    CorruptionKind.PIXELATE: _pixelate,
    CorruptionKind.JPEG: _jpeg,
}


def corrupt(image: np.ndarray, spec: CorruptionSpec,
            table: SeverityTable | None = None) -> np.ndarray:
    """Apply one corruption; output is clipped to [0,1]. Severity 0
    returns the input unchanged."""
    image = _check_image(image)
    if spec.severity == 0:
        return image.copy()
    table = table or default_severity_table()
    params = table.at(spec.kind, spec.severity)

    def rngs(stage):
        return keyed_rng(spec.seed, spec.kind.value, spec.severity, stage)

    out = _KERNELS[spec.kind](image, params, rngs)
    return np.clip(out, 0.0, 1.0)


def corruption_suite(severities, base_seed: int = 0) -> list:
    """All 15 kinds at the given severities, table order then severity;
    per-spec seeds derive deterministically from (kind, severity, base)."""
    severities = sorted(set(severities))
    if any(s < 1 or s > 5 for s in severities):
        raise UsageError(f"suite severities must lie in 1..5, got {severities}")
    specs = []
    for kind in CorruptionKind:
        for s in severities:
            seed = stable_key("suite", kind.value, s, base_seed) % (2 ** 63)
            specs.append(CorruptionSpec(kind, s, seed))
    return specs
