"""
Pseudo Abnormal Proxy Constructor

Cuts a random rectangle out of a normal image and hard-pastes it into a
normal proxy at the same position, returning the pasted proxy P′ and the
binary paste mask M.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ArgumentError
from .imaging import MIN_SIDE
from .superpixel import edge_map

PAPC_SOURCES = ("other", "self")


@dataclass
class PseudoProxy:
    proxy_prime: np.ndarray
    mask: np.ndarray
    source_id: str
    patch_rect: Tuple[int, int, int, int]


def patch_side_bounds(side):
    """Patch sides are drawn from [side/8, side/2]"""
    return max(2, side // 8), max(2, side // 2)


def sample_rect(rng, height, width):
    if height < MIN_SIDE or width < MIN_SIDE:
        raise ArgumentError(f"image {height}x{width} is too small for pseudo anomalies (min {MIN_SIDE}px)")
    h_lo, h_hi = patch_side_bounds(height)
    w_lo, w_hi = patch_side_bounds(width)
    ph = int(rng.integers(h_lo, h_hi + 1))
    pw = int(rng.integers(w_lo, w_hi + 1))
    top = int(rng.integers(0, height - ph + 1))
    left = int(rng.integers(0, width - pw + 1))
    return top, left, ph, pw


def construct_pseudo_proxy(base_proxy, source_image, rng, source_id="", source_edges=None,
                           edge_params=None) -> PseudoProxy:
    """
    Paste `source_image[rect]` into `base_proxy[rect]`

    `base_proxy` is H×W×C. For two-channel proxies the second channel
    inside the rectangle comes from the source image's edge map
    (`source_edges`, computed when not given).
    """
    base = np.asarray(base_proxy, dtype=np.float32)
    if base.ndim == 2:
        base = base[..., None]
    source = np.asarray(source_image, dtype=np.float64)
    if source.shape != base.shape[:2]:
        raise ArgumentError(f"source image {source.shape} does not match proxy {base.shape[:2]}")

    top, left, ph, pw = sample_rect(rng, *source.shape)
    rows, cols = slice(top, top + ph), slice(left, left + pw)

    mask = np.zeros(source.shape, dtype=np.float32)
    mask[rows, cols] = 1.0
    pasted = base.copy()
    pasted[rows, cols, 0] = source[rows, cols]
    if base.shape[-1] > 1:
        if source_edges is None:
            source_edges = edge_map(source, **(edge_params or {}))
        pasted[rows, cols, 1] = np.asarray(source_edges)[rows, cols]

    return PseudoProxy(pasted, mask, source_id, (top, left, ph, pw))


def pick_source_index(rng, n_images, own_index, papc_source="other"):
    """Random different training image ('other') or the sample itself ('self')"""
    if papc_source not in PAPC_SOURCES:
        raise ArgumentError(f"papc source must be one of {PAPC_SOURCES}, got {papc_source!r}")
    if papc_source == "self" or n_images < 2:
        return own_index
    index = int(rng.integers(0, n_images - 1))
    return index + 1 if index >= own_index else index
