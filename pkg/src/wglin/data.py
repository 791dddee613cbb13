"""Deterministic synthetic multi-view dataset plus PPM/PGM file ingestion.

Each sample is V views of a disk-shaped "retina" with grade-dependent
elliptical lesions and a binary lesion mask channel. Adjacent views share a
mirrored overlap strip so the same lesions appear twice, mimicking the
overlapping fields of multi-view capture. All randomness flows through the
package PRNG (splitmix64 -> xoshiro256**), so a spec is bit-reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedImage
from .rng import Rng, mix_seed

logger = logging.getLogger(__name__)

NUM_GRADES = 5

# per grade: (count_lo, count_hi, radius_lo, radius_hi) in pixels at 64x64
DEFAULT_GRADE_PROFILES = (
    (0, 0, 0.0, 0.0),
    (2, 3, 1.5, 2.5),
    (5, 7, 2.5, 3.5),
    (9, 12, 3.5, 4.5),
    (14, 18, 4.5, 6.0),
)


@dataclass
class SynthSpec:
    seed: int = 42
    height: int = 64
    width: int = 64
    views: int = 4
    image_channels: int = 3
    lesion_channels: int = 1
    overlap_fraction: float = 0.15
    grade_profiles: tuple = DEFAULT_GRADE_PROFILES

    def validate(self):
        if not (0.0 <= self.overlap_fraction <= 0.5):
            raise ValueError(f"overlap_fraction {self.overlap_fraction} outside [0, 0.5]")
        if len(self.grade_profiles) != NUM_GRADES:
            raise ValueError("need one lesion profile per grade")
        burdens = [0.5 * (lo + hi) * np.pi * (0.5 * (rlo + rhi)) ** 2
                   for lo, hi, rlo, rhi in self.grade_profiles]
        if any(b2 <= b1 for b1, b2 in zip(burdens, burdens[1:])):
            raise ValueError("expected lesion burden must strictly increase with grade")


@dataclass
class MultiViewBatch:
    """B samples x V views, flattened view-major on the leading axis."""

    images: np.ndarray    # [V*B, Cx, H, W] in [0, 1]
    lesions: np.ndarray   # [V*B, Cl, H, W] binary
    labels: np.ndarray    # [B] ints in [0, NUM_GRADES)
    sample_ids: list[str]


def generate_sample(spec: SynthSpec, grade: int, rng: Rng):
    """One multi-view sample: (images [V,Cx,H,W], lesions [V,Cl,H,W])."""
    if not 0 <= grade < NUM_GRADES:
        raise ValueError(f"grade {grade} outside [0, {NUM_GRADES})")
    h, w, v = spec.height, spec.width, spec.views
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radius = 0.42 * min(h, w) * (0.95 + 0.1 * rng.random())
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    disk = dist <= radius
    vignette = np.clip(1.0 - 0.45 * (dist / radius) ** 2, 0.0, None) * disk

    base = np.array([0.50 + 0.15 * rng.random(),
                     0.30 + 0.10 * rng.random(),
                     0.15 + 0.10 * rng.random()])[:spec.image_channels]

    images = np.zeros((v, spec.image_channels, h, w))
    lesions = np.zeros((v, spec.lesion_channels, h, w))
    lo, hi, rlo, rhi = spec.grade_profiles[grade]
    for view in range(v):
        brightness = 0.9 + 0.2 * rng.random()
        img = base[:, None, None] * vignette[None] * brightness
        mask = np.zeros((h, w), dtype=bool)
        count = rng.randint(lo, hi) if hi > 0 else 0
        for _ in range(count):
            ang = rng.uniform(0.0, 2.0 * np.pi)
            rad = 0.75 * radius * np.sqrt(rng.random())
            ly = cy + rad * np.sin(ang)
            lx = cx + rad * np.cos(ang)
            ry = rng.uniform(rlo, rhi)
            rx = rng.uniform(rlo, rhi)
            tilt = rng.uniform(0.0, np.pi)
            dy, dx = yy - ly, xx - lx
            u = dx * np.cos(tilt) + dy * np.sin(tilt)
            t = -dx * np.sin(tilt) + dy * np.cos(tilt)
            ellipse = ((u / rx) ** 2 + (t / ry) ** 2) <= 1.0
            mask |= ellipse & disk
        boost = np.array([0.35, 0.30, 0.10])[:spec.image_channels]
        img = img + boost[:, None, None] * mask[None]
        images[view] = np.clip(img, 0.0, 1.0)
        lesions[view, 0] = mask.astype(np.float64)

    ow = int(round(spec.overlap_fraction * w))
    if ow > 0:
        for view in range(1, v):
            images[view, :, :, :ow] = images[view - 1, :, :, w - ow:][:, :, ::-1]
            lesions[view, :, :, :ow] = lesions[view - 1, :, :, w - ow:][:, :, ::-1]
    return images, lesions


class Dataset:
    """In-memory dataset; images cached as float32, masks as uint8."""

    def __init__(self, images, lesions, labels, sample_ids):
        self.images = np.asarray(images, dtype=np.float32)
        self.lesions = np.asarray(lesions, dtype=np.uint8)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.sample_ids = list(sample_ids)

    def __len__(self):
        return len(self.labels)

    def batch(self, indices) -> MultiViewBatch:
        indices = np.asarray(indices)
        imgs = self.images[indices].astype(np.float64)     # [B, V, Cx, H, W]
        les = self.lesions[indices].astype(np.float64)
        b, v = imgs.shape[0], imgs.shape[1]
        imgs = imgs.swapaxes(0, 1).reshape((v * b,) + imgs.shape[2:])
        les = les.swapaxes(0, 1).reshape((v * b,) + les.shape[2:])
        return MultiViewBatch(imgs, les, self.labels[indices],
                              [self.sample_ids[i] for i in indices])

    def batches(self, batch_size: int, order=None):
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])


def generate_dataset(spec: SynthSpec, n_per_class: int, split_ratio: float):
    """Balanced synthetic train/test datasets with id-disjoint splits."""
    spec.validate()
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    train, test = ([], [], [], []), ([], [], [], [])
    n_train = int(round(n_per_class * split_ratio))
    for grade in range(NUM_GRADES):
        for i in range(n_per_class):
            index = grade * n_per_class + i
            rng = Rng(mix_seed(spec.seed, 0xDA7A, index))
            images, lesions = generate_sample(spec, grade, rng)
            dest = train if i < n_train else test
            dest[0].append(images)
            dest[1].append(lesions)
            dest[2].append(grade)
            dest[3].append(f"g{grade}-{i:05d}")
    return (Dataset(*train), Dataset(*test))


# -- PPM / PGM --------------------------------------------------------------

def _write_pnm(path: Path, magic: bytes, arr: np.ndarray):
    h, w = arr.shape[-2], arr.shape[-1]
    raster = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if magic == b"P6":
        raster = raster.transpose(1, 2, 0)  # HWC interleave
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(raster.tobytes())


def write_ppm(path, image: np.ndarray):
    """image: [3, H, W] floats in [0, 1]."""
    _write_pnm(Path(path), b"P6", image)


def write_pgm(path, image: np.ndarray):
    """image: [H, W] floats in [0, 1]."""
    _write_pnm(Path(path), b"P5", image)


def _read_pnm(path: Path):
    data = path.read_bytes()
    if data[:2] not in (b"P5", b"P6"):
        raise MalformedImage(f"{path}: bad magic {data[:2]!r}")
    magic = data[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedImage(f"{path}: truncated header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError as e:
            raise MalformedImage(f"{path}: non-numeric header field") from e
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255 or w < 1 or h < 1:
        raise MalformedImage(f"{path}: unsupported dimensions/maxval {fields}")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    raster = np.frombuffer(data, dtype=np.uint8, count=-1, offset=pos)
    if raster.size != need:
        raise MalformedImage(f"{path}: raster size {raster.size}, expected {need}")
    if magic == b"P6":
        return raster.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0
    return raster.reshape(h, w).astype(np.float64) / 255.0


def read_ppm(path) -> np.ndarray:
    arr = _read_pnm(Path(path))
    if arr.ndim != 3:
        raise MalformedImage(f"{path}: expected P6 color image")
    return arr


def read_pgm(path) -> np.ndarray:
    arr = _read_pnm(Path(path))
    if arr.ndim != 2:
        raise MalformedImage(f"{path}: expected P5 gray image")
    return arr


def save_dataset(dataset: Dataset, root, split: str):
    """Write a dataset in the on-disk layout understood by the loader."""
    root = Path(root)
    for i, sid in enumerate(dataset.sample_ids):
        grade = int(dataset.labels[i])
        d = root / split / str(grade) / sid
        d.mkdir(parents=True, exist_ok=True)
        for v in range(dataset.images.shape[1]):
            write_ppm(d / f"view{v + 1}.ppm", dataset.images[i, v].astype(np.float64))
            write_pgm(d / f"view{v + 1}_lesion.pgm",
                      dataset.lesions[i, v, 0].astype(np.float64))


def load_directory_dataset(root, split: str, views: int = 4):
    """Load `root/<split>/<grade>/<sample>/view{k}.ppm` samples.

    Returns (Dataset, skip_report). Samples with fewer than `views` views are
    skipped and reported; a missing lesion file yields an all-zero mask with
    a logged warning.
    """
    root = Path(root) / split
    images, lesions, labels, ids = [], [], [], []
    skipped = []
    for grade_dir in sorted(root.iterdir() if root.is_dir() else []):
        if not grade_dir.is_dir() or not grade_dir.name.isdigit():
            continue
        grade = int(grade_dir.name)
        for sample_dir in sorted(p for p in grade_dir.iterdir() if p.is_dir()):
            view_files = [sample_dir / f"view{k + 1}.ppm" for k in range(views)]
            if not all(p.is_file() for p in view_files):
                skipped.append(f"{sample_dir}: fewer than {views} views")
                continue
            imgs = np.stack([read_ppm(p) for p in view_files])
            masks = []
            for k in range(views):
                lp = sample_dir / f"view{k + 1}_lesion.pgm"
                if lp.is_file():
                    masks.append((read_pgm(lp) * 255.0 >= 128).astype(np.float64))
                else:
                    logger.warning("missing lesion map %s; using all-zero mask", lp)
                    masks.append(np.zeros(imgs.shape[-2:]))
            lesions.append(np.stack(masks)[:, None])
            images.append(imgs)
            labels.append(grade)
            ids.append(sample_dir.name)
    if not images:
        h = w = 0
        dataset = Dataset(np.zeros((0, views, 3, 1, 1)),
                          np.zeros((0, views, 1, 1, 1)), [], [])
    else:
        dataset = Dataset(np.stack(images), np.stack(lesions), labels, ids)
    return dataset, skipped
