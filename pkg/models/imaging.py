"""
Grayscale image handling: validation, PNG ingestion, export and
synthetic layered phantoms for desk-scale experiments
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ArgumentError, DatasetError, SpecError
from .logs import get_logger

log = get_logger("imaging")

MIN_SIDE = 16
NORMAL = "normal"
ABNORMAL = "abnormal"
LABELS = (NORMAL, ABNORMAL)

# Sibling artifacts written next to sources; never samples themselves
_SIDECAR_SUFFIXES = ("_mask", "_proxy", "_proxy_0", "_proxy_1")

LAYER_LEVELS = np.array([0.2, 0.42])
LEVEL_JITTER = 0.05


def as_grayscale(pixels, name="image", min_side=MIN_SIDE):
    """Validate an H×W intensity array and return it as float64"""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise ArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise ArgumentError(f"{name} must be at least {min_side}x{min_side}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} contains NaN or Inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ArgumentError(f"{name} intensities must lie in [0, 1]")
    return arr


@dataclass
class LabeledSample:
    id: str
    image: np.ndarray
    label: str
    lesion_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ArgumentError(f"label must be one of {LABELS}, got {self.label!r}")
        self.image = as_grayscale(self.image, name=self.id)
        if self.lesion_mask is not None:
            if self.label != ABNORMAL:
                raise ArgumentError(f"{self.id}: lesion mask given for a normal sample")
            mask = np.asarray(self.lesion_mask)
            if mask.shape != self.image.shape:
                raise ArgumentError(f"{self.id}: mask shape {mask.shape} != image shape {self.image.shape}")
            self.lesion_mask = mask.astype(bool)

    @property
    def is_abnormal(self):
        return self.label == ABNORMAL


@dataclass(frozen=True)
class PhantomSpec:
    image_size: int = 64
    n_train_normal: int = 300
    n_test_normal: int = 100
    n_test_abnormal: int = 100
    lesion_radius_range: Tuple[float, float] = (3.0, 7.0)
    lesion_contrast_range: Tuple[float, float] = (0.12, 0.24)
    noise_sigma: float = 0.02
    seed: int = 0
    n_bands: int = 5

    def validate(self):
        if self.image_size < MIN_SIDE:
            raise SpecError(f"image_size must be >= {MIN_SIDE}")
        for name in ("n_train_normal", "n_test_normal", "n_test_abnormal"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be >= 1")
        for name in ("lesion_radius_range", "lesion_contrast_range"):
            low, high = getattr(self, name)
            if low > high:
                raise SpecError(f"{name} is empty: [{low}, {high}]")
        if self.lesion_radius_range[0] <= 0:
            raise SpecError("lesion radii must be positive")
        if 2 * self.lesion_radius_range[1] + 1 > self.image_size:
            raise SpecError(
                f"lesion radius up to {self.lesion_radius_range[1]} does not fit a {self.image_size}px image"
            )
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be >= 0")
        if self.n_bands < 1:
            raise SpecError("n_bands must be >= 1")
        return self


# ============================================================
# INGESTION
# ============================================================

def pil_to_array(img: Image.Image, image_size=None, is_mask=False, name="image"):
    """Grayscale [0,1] array (or boolean mask) from a PIL image of any common mode"""
    mode = img.mode
    if mode in ("RGB", "RGBA", "LA", "P", "CMYK", "YCbCr"):
        img = img.convert("L")
        mode = "L"
    if image_size is not None and img.size != (image_size, image_size):
        if mode.startswith("I"):
            img = img.convert("I")
            mode = "I"
        resample = Image.Resampling.NEAREST if is_mask else Image.Resampling.BILINEAR
        img = img.resize((image_size, image_size), resample)
    arr = np.array(img)

    if mode == "1":
        values = arr.astype(np.float64)
    elif mode == "L":
        values = arr.astype(np.float64) / 255.0
    elif mode.startswith("I"):
        if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
            raise DatasetError("integer image outside the 16-bit range", file=name)
        values = arr.astype(np.float64) / 65535.0
    else:
        raise DatasetError(f"unsupported image mode {mode!r}", file=name)

    if is_mask:
        return values >= 0.5
    return np.clip(values, 0.0, 1.0)


def _read_png(path: Path, image_size=None, is_mask=False):
    try:
        with Image.open(path) as img:
            img.load()
            return pil_to_array(img, image_size, is_mask, name=str(path))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DatasetError(f"unreadable image ({exc})", file=str(path)) from exc


def _is_sidecar(path: Path):
    return path.stem.endswith(_SIDECAR_SUFFIXES)


def load_dataset(root_path, split, image_size=None) -> List[LabeledSample]:
    """
    Load `root/{train|test}/{normal|abnormal}/*.png`

    Intensities are rescaled by the bit depth (v / 255 or v / 65535);
    abnormal samples pick up `<id>_mask.png` when present. Samples of
    both classes are ordered by filename (ties by class, normal first).
    """
    if split not in ("train", "test"):
        raise ArgumentError(f"split must be 'train' or 'test', got {split!r}")
    split_dir = Path(root_path) / split
    if not split_dir.is_dir():
        raise DatasetError("missing dataset directory", file=str(split_dir))

    found = []
    for label in LABELS:
        class_dir = split_dir / label
        if not class_dir.is_dir():
            continue
        for path in sorted(class_dir.glob("*.png"), key=lambda p: p.name):
            if _is_sidecar(path):
                continue
            image = _read_png(path, image_size)
            mask = None
            mask_path = path.with_name(f"{path.stem}_mask.png")
            if label == ABNORMAL and mask_path.exists():
                mask = _read_png(mask_path, image_size, is_mask=True)
                if mask.shape != image.shape:
                    raise DatasetError("mask shape does not match its image", file=str(mask_path))
            try:
                found.append((path.name, LABELS.index(label), LabeledSample(path.stem, image, label, mask)))
            except ArgumentError as exc:
                raise DatasetError(str(exc), file=str(path)) from exc
    samples = [sample for _, _, sample in sorted(found, key=lambda item: item[:2])]

    if split == "train" and not any(s.label == NORMAL for s in samples):
        raise DatasetError("no training images", file=str(split_dir / NORMAL))
    if not samples:
        raise DatasetError("no images", file=str(split_dir))
    log.info(f"✓ Loaded {len(samples)} {split} samples from {split_dir}")
    return samples


def save_png(path, pixels, bits=16):
    """Write intensities in [0,1] as an 8- or 16-bit grayscale PNG"""
    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    if bits == 16:
        img = Image.fromarray(np.round(arr * 65535.0).astype(np.uint16))
    elif bits == 8:
        img = Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L")
    else:
        raise ArgumentError(f"bits must be 8 or 16, got {bits}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def export_dataset(root_path, train, test):
    """Write samples to the layout `load_dataset` reads"""
    root = Path(root_path)
    for split, samples in (("train", train), ("test", test)):
        for sample in samples:
            target = root / split / sample.label / f"{sample.id}.png"
            save_png(target, sample.image, bits=16)
            if sample.lesion_mask is not None:
                save_png(target.with_name(f"{sample.id}_mask.png"), sample.lesion_mask, bits=8)
    log.info(f"✓ Exported {len(train)} train / {len(test)} test samples to {root}")
    return root


# ============================================================
# PHANTOMS
# ============================================================

def _layered_background(rng, spec: PhantomSpec):
    """Stacked horizontal bands with per-image offset and curvature"""
    size = spec.image_size
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    offset = rng.uniform(-0.08, 0.08) * size
    curvature = rng.uniform(-0.25, 0.25)
    tilt = rng.uniform(-0.06, 0.06)
    xc = (xs - size / 2.0) / size
    warp = offset + curvature * size * xc ** 2 + tilt * size * xc

    # Alternating dark / bright layers, jittered per image; the brightest stays near 0.5
    levels = LAYER_LEVELS[np.arange(spec.n_bands + 1) % 2]
    levels = levels + rng.uniform(-LEVEL_JITTER, LEVEL_JITTER, size=levels.shape)
    edges = np.linspace(0.0, size, spec.n_bands + 2)[1:-1]
    edges = edges + rng.uniform(-0.04, 0.04, size=edges.shape) * size
    softness = max(size / 64.0, 0.5)

    image = np.full((size, size), levels[0])
    for i, edge in enumerate(edges):
        step = 1.0 / (1.0 + np.exp(-(ys - warp - edge) / softness))
        image = image + (levels[i + 1] - levels[i]) * step
    return image


def _normal_phantom(rng, spec: PhantomSpec):
    image = _layered_background(rng, spec)
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def _ellipse_mask(rng, spec: PhantomSpec):
    size = spec.image_size
    ry, rx = rng.uniform(*spec.lesion_radius_range, size=2)
    cy = rng.uniform(ry, size - 1 - ry)
    cx = rng.uniform(rx, size - 1 - rx)
    ys, xs = np.mgrid[0:size, 0:size]
    mask = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    if not mask.any():
        mask[int(round(cy)), int(round(cx))] = True
    return mask


def make_abnormal_pair(rng, spec: PhantomSpec):
    """
    Returns (base, abnormal, mask): the lesion is added after noise, so
    `abnormal == base` exactly wherever `mask` is False
    """
    base = _normal_phantom(rng, spec)
    mask = _ellipse_mask(rng, spec)
    contrast = rng.uniform(*spec.lesion_contrast_range)
    abnormal = base.copy()
    abnormal[mask] = np.clip(base[mask] + contrast, 0.0, 1.0)
    return base, abnormal, mask


def generate_phantoms(spec: PhantomSpec):
    """Pure function of `spec`: returns (train, test) lists of LabeledSample"""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    train = [
        LabeledSample(f"train_{i:04d}", _normal_phantom(rng, spec), NORMAL)
        for i in range(spec.n_train_normal)
    ]
    test = [
        LabeledSample(f"test_normal_{i:04d}", _normal_phantom(rng, spec), NORMAL)
        for i in range(spec.n_test_normal)
    ]
    for i in range(spec.n_test_abnormal):
        _, abnormal, mask = make_abnormal_pair(rng, spec)
        test.append(LabeledSample(f"test_abnormal_{i:04d}", abnormal, ABNORMAL, mask))
    log.info(
        f"✓ Generated phantoms: {len(train)} train, {spec.n_test_normal} normal / "
        f"{spec.n_test_abnormal} abnormal test ({spec.image_size}px, seed {spec.seed})"
    )
    return train, test
