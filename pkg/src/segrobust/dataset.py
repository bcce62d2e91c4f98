"""Deterministic synthetic segmentation data and lossless image I/O.

Scenes are textured shapes on a textured background: class 1 is a disk,
class 2 an axis-aligned square, class 3 a triangle, class 0 background.
Every class gets its own colour range over a shared fractal value-noise
texture, so no class is a flat colour and background is not trivial.

Images are stored as binary PPM (P6) and label maps as binary PGM (P5);
both round-trip without a codec dependency. A dataset directory holds
images/<id>.ppm, labels/<id>.pgm and manifest.txt with one
"<id> <split>" line per sample.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .numerics import bilinear_resize
from .rng import keyed_rng, stable_key

log = logging.getLogger(__name__)

# (low, high) RGB ramps per class; index 0 is background
DEFAULT_PALETTE = (
    ((0.05, 0.15, 0.25), (0.30, 0.45, 0.55)),
    ((0.55, 0.12, 0.08), (0.95, 0.45, 0.25)),
    ((0.08, 0.50, 0.15), (0.35, 0.90, 0.45)),
    ((0.45, 0.12, 0.55), (0.85, 0.40, 0.95)),
)

VAL_FRACTION_PERCENT = 20


@dataclass(frozen=True)
class SyntheticSceneSpec:
    seed: int = 0
    image_size: int = 96
    num_classes: int = 4
    min_shapes: int = 1
    max_shapes: int = 3
    min_radius: int = 8
    max_radius: int = 22
    noise_floor: float = 0.02
    max_overlap: float = 0.3
    placement_tries: int = 25
    palette: tuple = field(default=DEFAULT_PALETTE)

    def __post_init__(self):
        if self.num_classes < 2 or self.num_classes - 1 > len(self.palette) - 1:
            raise UsageError(f"num_classes={self.num_classes} needs "
                             f"{self.num_classes - 1} shape archetypes")
        if self.min_radius < 4:
            raise UsageError("shapes must have radius >= 4 px")
        if not (1 <= self.min_shapes <= self.max_shapes):
            raise UsageError("need 1 <= min_shapes <= max_shapes")


@dataclass
class Sample:
    image: np.ndarray  # (H,W,3) float64 in [0,1]
    label: np.ndarray  # (H,W) int64 in [0,k)
    id: str


def split_of(sample_id: str) -> str:
    """Stable train/val assignment from the id alone."""
    return "val" if stable_key("split", sample_id) % 100 < VAL_FRACTION_PERCENT else "train"


def value_noise(rng: np.random.Generator, h: int, w: int,
                cells: tuple = (16, 8, 4), gain: float = 0.55) -> np.ndarray:
    """Multi-octave value noise in [0,1]: coarse uniform grids upsampled
    bilinearly and summed with decaying amplitude."""
    out = np.zeros((h, w))
    amp = 1.0
    for cell in cells:
        gh, gw = max(2, h // cell + 1), max(2, w // cell + 1)
        out += amp * bilinear_resize(rng.random((gh, gw)), h, w)
        amp *= gain
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else np.zeros_like(out)


def _shape_mask(archetype: int, size: int, cy: float, cx: float, r: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    if archetype == 1:  # disk
        return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    if archetype == 2:  # axis-aligned square
        return (np.abs(ys - cy) <= r) & (np.abs(xs - cx) <= r)
    if archetype == 3:  # apex-up isoceles triangle
        top = cy - r
        frac = (ys - top) / (2.0 * r)
        return (frac >= 0) & (frac <= 1) & (np.abs(xs - cx) <= frac * r)
    raise UsageError(f"no shape archetype for class {archetype}")


def _textured_fill(rng, h, w, lo, hi) -> np.ndarray:
    t = value_noise(rng, h, w)[..., None]
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return lo + t * (hi - lo)


def generate_sample(spec: SyntheticSceneSpec, index: int) -> Sample:
    rng = keyed_rng(spec.seed, "sample", index)
    n = spec.image_size
    image = _textured_fill(rng, n, n, *spec.palette[0])
    label = np.zeros((n, n), dtype=np.int64)
    occupied = np.zeros((n, n), dtype=bool)

    want = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
    placed = 0
    for _ in range(want):
        for _try in range(spec.placement_tries):
            cls = int(rng.integers(1, spec.num_classes))
            r = float(rng.uniform(spec.min_radius, spec.max_radius))
            cy = float(rng.uniform(r, n - 1 - r))
            cx = float(rng.uniform(r, n - 1 - r))
            mask = _shape_mask(cls, n, cy, cx, r)
            area = mask.sum()
            if area and (mask & occupied).sum() <= spec.max_overlap * area:
                image[mask] = _textured_fill(rng, n, n, *spec.palette[cls])[mask]
                label[mask] = cls
                occupied |= mask
                placed += 1
                break
        else:
            log.debug("sample %d: dropped a shape after %d placement tries",
                      index, spec.placement_tries)
    if placed < want:
        log.debug("sample %d: placed %d of %d shapes", index, placed, want)

    image += rng.uniform(-spec.noise_floor, spec.noise_floor, size=image.shape)
    sample_id = f"{spec.seed:08d}-{index:05d}"
    return Sample(np.clip(image, 0.0, 1.0), label, sample_id)


def generate(spec: SyntheticSceneSpec, count: int) -> list:
    """Deterministic list of samples; each index seeds its own stream."""
    if count < 1:
        raise UsageError("count must be >= 1")
    return [generate_sample(spec, i) for i in range(count)]


def train_val_split(samples):
    train = [s for s in samples if split_of(s.id) == "train"]
    val = [s for s in samples if split_of(s.id) == "val"]
    return train, val


# ---------------------------------------------------------------------------
# Netpbm I/O


def _read_pnm_header(data: bytes, magic: bytes, path):
    if data[:2] != magic:
        raise DataError(f"{path}: expected {magic.decode()} header, "
                        f"got {data[:2]!r} at offset 0")
    fields = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(data):
            raise DataError(f"{path}: truncated header at offset {pos}")
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        elif c.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise DataError(f"{path}: bad header byte {c!r} at offset {pos}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DataError(f"{path}: missing whitespace after header at offset {pos}")
    w, h, maxval = fields
    if w < 1 or h < 1 or not (0 < maxval < 256):
        raise DataError(f"{path}: bad dimensions {w}x{h} maxval {maxval}")
    return w, h, maxval, pos + 1


def write_image(path, image: np.ndarray) -> None:
    """Write an (H,W,3) [0,1] image as binary PPM (P6, 8-bit)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise UsageError(f"image must be (H,W,3), got {image.shape}")
    h, w = image.shape[:2]
    raw = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + raw.tobytes())


def read_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, maxval, ofs = _read_pnm_header(data, b"P6", path)
    body = data[ofs:ofs + 3 * w * h]
    if len(body) != 3 * w * h:
        raise DataError(f"{path}: expected {3*w*h} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / maxval


def write_label(path, label: np.ndarray) -> None:
    """Write an (H,W) integer class map as binary PGM (P5, 8-bit)."""
    label = np.asarray(label)
    if label.ndim != 2:
        raise UsageError(f"label must be (H,W), got {label.shape}")
    if label.min() < 0 or label.max() > 255:
        raise UsageError("label indices must fit in one byte")
    h, w = label.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h)
                           + label.astype(np.uint8).tobytes())


def read_label(path, num_classes: int | None = None) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, _maxval, ofs = _read_pnm_header(data, b"P5", path)
    body = data[ofs:ofs + w * h]
    if len(body) != w * h:
        raise DataError(f"{path}: expected {w*h} label bytes, got {len(body)}")
    label = np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.int64)
    if num_classes is not None and label.max() >= num_classes:
        raise DataError(f"{path}: label index {label.max()} >= k={num_classes}")
    return label


# ---------------------------------------------------------------------------
# Dataset directories


def write_dataset(root, samples) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        write_image(root / "images" / f"{s.id}.ppm", s.image)
        write_label(root / "labels" / f"{s.id}.pgm", s.label)
        lines.append(f"{s.id} {split_of(s.id)}\n")
    (root / "manifest.txt").write_text("".join(lines))


def load_dataset(root, num_classes: int | None = None):
    """Read a dataset directory back; returns (train, val) sample lists."""
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise DataError(f"{manifest}: no manifest found")
    train, val = [], []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("train", "val"):
            raise DataError(f"{manifest}:{lineno}: bad manifest line {line!r}")
        sid, split = parts
        sample = Sample(read_image(root / "images" / f"{sid}.ppm"),
                        read_label(root / "labels" / f"{sid}.pgm", num_classes),
                        sid)
        (train if split == "train" else val).append(sample)
    return train, val
