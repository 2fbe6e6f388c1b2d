"""
Superpixel segmentation (SLIC) and proxy construction

Proxies are the intermediate images the reconstruction is bridged
through: the superpixel-image (SI) plus the edge / smoothing variants
used in the proxy comparison study.
"""

import math
from dataclasses import dataclass
from enum import Enum

import cv2
import numpy as np
from scipy import ndimage
from skimage.measure import label as connected_label

from .errors import ArgumentError
from .imaging import as_grayscale
from .logs import get_logger

log = get_logger("slic")

# Intensities are scaled to the 8-bit range so classic compactness values apply
INTENSITY_SCALE = 255.0
REFERENCE_SUPERPIXELS = 800
REFERENCE_AREA = 256 * 256


class ProxyMode(Enum):
    """Proxy options"""
    SI = "si"
    EDGE = "edge"
    SMOOTH_IMAGE = "smooth_image"
    SMOOTH_PATCHES = "smooth_patches"
    EDGE_CONCAT_SMOOTH = "edge_concat_smooth"
    EDGE_CONCAT_PATCHES = "edge_concat_patches"

    @property
    def channel_count(self):
        return 2 if self in (ProxyMode.EDGE_CONCAT_SMOOTH, ProxyMode.EDGE_CONCAT_PATCHES) else 1

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ArgumentError(
                f"unknown proxy mode {value!r}; expected one of {[m.value for m in cls]}"
            ) from None


@dataclass(frozen=True)
class ProxyParams:
    n_superpixels: int = 50
    compactness: float = 10.0
    slic_iters: int = 10
    smooth_sigma: float = 2.0
    patch_size: int = 8
    canny_sigma: float = 1.0
    canny_low: float = 0.1
    canny_high: float = 0.2


def area_scaled_superpixels(height, width):
    """Keep the average superpixel size of 800 segments at 256x256"""
    return max(1, int(round(REFERENCE_SUPERPIXELS * height * width / REFERENCE_AREA)))


@dataclass
class SuperpixelLabels:
    labels: np.ndarray
    n_segments: int


@dataclass
class SuperpixelImage:
    pixels: np.ndarray
    source_labels: SuperpixelLabels


# ============================================================
# SLIC
# ============================================================

def _grid_centers(height, width, n_superpixels):
    ny = max(1, min(height, int(round(math.sqrt(n_superpixels * height / width)))))
    nx = max(1, min(width, int(math.ceil(n_superpixels / ny))))
    step_y, step_x = height / ny, width / nx
    ys = np.floor((np.arange(ny) + 0.5) * step_y).astype(int)
    xs = np.floor((np.arange(nx) + 0.5) * step_x).astype(int)
    cy, cx = np.meshgrid(ys, xs, indexing="ij")
    return cy.ravel(), cx.ravel(), min(step_y, step_x)


def _gradient_magnitude(image):
    padded = np.pad(image, 1, mode="edge")
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return gx ** 2 + gy ** 2


def _perturb_centers(image, cy, cx):
    """Move each center to the lowest-gradient pixel of its 3x3 neighborhood"""
    height, width = image.shape
    grad = _gradient_magnitude(image)
    # (0, 0) first: the current position wins ties
    offsets = [(0, 0)] + [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    new_y, new_x = cy.copy(), cx.copy()
    for k in range(len(cy)):
        best = None
        for dy, dx in offsets:
            y, x = cy[k] + dy, cx[k] + dx
            if 0 <= y < height and 0 <= x < width and (best is None or grad[y, x] < best):
                best = grad[y, x]
                new_y[k], new_x[k] = y, x
    return new_y, new_x


def _assign(scaled, centers, S, spatial_weight, windowed=True):
    height, width = scaled.shape
    labels = np.full((height, width), -1, dtype=np.int64)
    dist = np.full((height, width), np.inf)
    radius = int(math.ceil(S)) if windowed else max(height, width)
    for k, (ci, cy, cx) in enumerate(centers):
        y0, y1 = max(0, int(cy) - radius), min(height, int(cy) + radius + 1)
        x0, x1 = max(0, int(cx) - radius), min(width, int(cx) + radius + 1)
        ys, xs = np.mgrid[y0:y1, x0:x1]
        d = (scaled[y0:y1, x0:x1] - ci) ** 2 + spatial_weight * ((ys - cy) ** 2 + (xs - cx) ** 2)
        window = dist[y0:y1, x0:x1]
        better = d < window
        window[better] = d[better]
        labels[y0:y1, x0:x1][better] = k
    return labels


def _update_centers(scaled, labels, centers):
    height, width = scaled.shape
    ys, xs = np.mgrid[0:height, 0:width]
    flat = labels.ravel()
    k = len(centers)
    counts = np.bincount(flat, minlength=k)
    sums = np.stack([
        np.bincount(flat, weights=scaled.ravel(), minlength=k),
        np.bincount(flat, weights=ys.ravel(), minlength=k),
        np.bincount(flat, weights=xs.ravel(), minlength=k),
    ], axis=1)
    updated = centers.copy()
    occupied = counts > 0
    updated[occupied] = sums[occupied] / counts[occupied, None]
    return updated


def _enforce_connectivity(labels, min_size):
    """
    Give every 4-connected piece its own label, fold pieces smaller than
    `min_size` into their largest neighbor, relabel in raster order
    """
    components = connected_label(labels + 1, background=0, connectivity=1)
    sizes = np.bincount(components.ravel())
    slices = ndimage.find_objects(components)
    height, width = labels.shape
    cross = ndimage.generate_binary_structure(2, 1)

    for comp_id in range(1, len(sizes)):
        if sizes[comp_id] == 0 or sizes[comp_id] >= min_size or slices[comp_id - 1] is None:
            continue
        sl_y, sl_x = slices[comp_id - 1]
        y0, y1 = max(0, sl_y.start - 1), min(height, sl_y.stop + 1)
        x0, x1 = max(0, sl_x.start - 1), min(width, sl_x.stop + 1)
        window = components[y0:y1, x0:x1]
        member = window == comp_id
        ring = ndimage.binary_dilation(member, structure=cross) & ~member
        neighbors = np.unique(window[ring])
        if neighbors.size == 0:
            continue
        # Largest neighbor, lowest id on ties
        target = neighbors[np.argmax(sizes[neighbors])]
        window[member] = target
        sizes[target] += sizes[comp_id]
        sizes[comp_id] = 0
        # Grow the target's bounding box so later merges into it see the whole region
        t_sl = slices[target - 1]
        slices[target - 1] = (
            slice(min(t_sl[0].start, sl_y.start), max(t_sl[0].stop, sl_y.stop)),
            slice(min(t_sl[1].start, sl_x.start), max(t_sl[1].stop, sl_x.stop)),
        )

    _, first_index, inverse = np.unique(components.ravel(), return_index=True, return_inverse=True)
    raster_rank = np.argsort(np.argsort(first_index))
    relabeled = raster_rank[inverse].reshape(labels.shape)
    return relabeled, int(first_index.size)


def slic_segment(image, n_superpixels, compactness=10.0, iters=10) -> SuperpixelLabels:
    """
    SLIC over (intensity, y, x) with D² = d_int² + (compactness / S)² · d_xy²

    Deterministic: no randomness anywhere. The resulting segment count can
    differ from `n_superpixels`.
    """
    image = as_grayscale(image, min_side=1)
    height, width = image.shape
    if n_superpixels < 1 or n_superpixels > height * width:
        raise ArgumentError(f"n_superpixels must be in [1, {height * width}], got {n_superpixels}")
    if compactness <= 0:
        raise ArgumentError("compactness must be > 0")
    if iters < 1:
        raise ArgumentError("iters must be >= 1")

    S = math.sqrt(height * width / n_superpixels)
    scaled = image * INTENSITY_SCALE
    cy, cx, step = _grid_centers(height, width, n_superpixels)
    if step >= 3:
        cy, cx = _perturb_centers(image, cy, cx)
    centers = np.stack([scaled[cy, cx], cy.astype(np.float64), cx.astype(np.float64)], axis=1)
    spatial_weight = (compactness / S) ** 2

    labels = None
    for _ in range(iters):
        labels = _assign(scaled, centers, S, spatial_weight)
        if (labels < 0).any():
            fallback = _assign(scaled, centers, S, spatial_weight, windowed=False)
            labels = np.where(labels < 0, fallback, labels)
        centers = _update_centers(scaled, labels, centers)

    relabeled, n_segments = _enforce_connectivity(labels, min_size=S * S / 4.0)
    log.debug(f"SLIC: requested {n_superpixels}, produced {n_segments} segments")
    return SuperpixelLabels(relabeled, n_segments)


def render_superpixel_image(image, labels: SuperpixelLabels) -> SuperpixelImage:
    """Color every segment with its mean intensity"""
    image = np.asarray(image, dtype=np.float64)
    lab = np.asarray(labels.labels)
    if image.shape != lab.shape:
        raise ArgumentError(f"image shape {image.shape} != label shape {lab.shape}")
    flat = lab.ravel()
    n = max(int(labels.n_segments), int(flat.max()) + 1)
    counts = np.bincount(flat, minlength=n)
    sums = np.bincount(flat, weights=image.ravel(), minlength=n)
    means = np.divide(sums, counts, out=np.zeros(n), where=counts > 0)

    # Constant segments keep their value bit-for-bit
    index = np.arange(n)
    present = counts > 0
    seg_min = np.zeros(n)
    seg_max = np.zeros(n)
    seg_min[present] = ndimage.minimum(image, lab, index[present])
    seg_max[present] = ndimage.maximum(image, lab, index[present])
    constant = present & (seg_min == seg_max)
    means[constant] = seg_min[constant]

    return SuperpixelImage(means[lab], labels)


# ============================================================
# OTHER PROXIES
# ============================================================

def edge_map(image, sigma=1.0, low=0.1, high=0.2):
    """Binary Canny edges; thresholds are fractions of the max gradient"""
    img8 = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    blurred = cv2.GaussianBlur(img8, (0, 0), sigmaX=sigma, sigmaY=sigma)
    gx = cv2.Sobel(blurred, cv2.CV_64F, 1, 0, ksize=3)
    gy = cv2.Sobel(blurred, cv2.CV_64F, 0, 1, ksize=3)
    max_grad = float(np.sqrt(gx ** 2 + gy ** 2).max())
    if max_grad == 0.0:
        return np.zeros(image.shape, dtype=np.float64)
    edges = cv2.Canny(blurred, low * max_grad, high * max_grad, L2gradient=True)
    return (edges > 0).astype(np.float64)


def smooth_image(image, sigma=2.0):
    blurred = cv2.GaussianBlur(
        np.asarray(image, dtype=np.float64), (0, 0), sigmaX=sigma, sigmaY=sigma,
        borderType=cv2.BORDER_REFLECT,
    )
    return np.clip(blurred, 0.0, 1.0)


def patch_labels(shape, patch_size):
    if patch_size < 1:
        raise ArgumentError("patch_size must be >= 1")
    height, width = shape
    rows = np.arange(height) // patch_size
    cols = np.arange(width) // patch_size
    n_cols = int(math.ceil(width / patch_size))
    grid = rows[:, None] * n_cols + cols[None, :]
    return SuperpixelLabels(grid, int(grid.max()) + 1)


def smooth_patches(image, patch_size=8):
    """Regular square patches colored with their average intensity"""
    return render_superpixel_image(image, patch_labels(np.shape(image), patch_size)).pixels


def make_proxy(image, mode, params: ProxyParams = None):
    """Build the H×W×C float32 proxy of `image` for `mode`"""
    mode = ProxyMode.parse(mode)
    params = params or ProxyParams()
    image = as_grayscale(image, min_side=1)

    if mode == ProxyMode.SI:
        labels = slic_segment(image, params.n_superpixels, params.compactness, params.slic_iters)
        channels = [render_superpixel_image(image, labels).pixels]
    elif mode == ProxyMode.EDGE:
        channels = [edge_map(image, params.canny_sigma, params.canny_low, params.canny_high)]
    elif mode == ProxyMode.SMOOTH_IMAGE:
        channels = [smooth_image(image, params.smooth_sigma)]
    elif mode == ProxyMode.SMOOTH_PATCHES:
        channels = [smooth_patches(image, params.patch_size)]
    elif mode == ProxyMode.EDGE_CONCAT_SMOOTH:
        channels = [smooth_image(image, params.smooth_sigma),
                    edge_map(image, params.canny_sigma, params.canny_low, params.canny_high)]
    else:
        channels = [smooth_patches(image, params.patch_size),
                    edge_map(image, params.canny_sigma, params.canny_low, params.canny_high)]

    return np.stack(channels, axis=-1).astype(np.float32)
