"""
Parallel proxy preparation and the on-disk proxy cache

Proxies are cached as PNG beside their source images (`<id>_proxy.png`,
or `<id>_proxy_0.png` / `<id>_proxy_1.png` for two-channel modes) with a
sidecar manifest recording the parameters they were built with.
"""

import os
from multiprocessing import Pool, cpu_count
from pathlib import Path

import numpy as np

from .imaging import _read_png, save_png
from .logs import get_logger
from .superpixel import ProxyMode, ProxyParams, make_proxy

log = get_logger("slic")

MANIFEST_NAME = "proxy_manifest.txt"


def worker_count(limit=None):
    """Workers allowed by PROXYAD_THREADS (or `limit`), never above the CPU count"""
    if limit is None:
        limit = int(os.getenv("PROXYAD_THREADS", "0") or 0)
    available = cpu_count()
    return max(1, min(available, limit)) if limit > 0 else available


def _proxy_worker(args):
    image, mode_value, params = args
    return make_proxy(image, ProxyMode(mode_value), params)


def compute_proxies(images, mode, params: ProxyParams, threads=None):
    """
    Build proxies for a list of H×W images, in order

    Uses a process pool when more than one worker is allowed and falls
    back to sequential processing if the pool fails.
    """
    mode = ProxyMode.parse(mode)
    work_items = [(image, mode.value, params) for image in images]
    num_workers = min(worker_count(threads), max(1, len(work_items)))

    if num_workers > 1 and len(work_items) > 1:
        try:
            log.info(f"💪 Building {len(work_items)} '{mode.value}' proxies on {num_workers} workers")
            with Pool(processes=num_workers) as pool:
                return pool.map(_proxy_worker, work_items)
        except Exception as e:
            log.warning(f"⚠️  Parallel proxy building failed, falling back to sequential ({e})")

    return [_proxy_worker(item) for item in work_items]


# ============================================================
# CACHE
# ============================================================

def manifest_entries(mode, params: ProxyParams, shape):
    """What a cached proxy depends on; `shape` is the working H×W of the split"""
    mode = ProxyMode.parse(mode)
    return {
        "mode": mode.value,
        "proxy_size": "x".join(str(int(s)) for s in shape),
        "n_superpixels": str(params.n_superpixels),
        "compactness": repr(float(params.compactness)),
        "slic_iters": str(params.slic_iters),
        "smooth_sigma": repr(float(params.smooth_sigma)),
        "patch_size": str(params.patch_size),
    }


def read_manifest(directory):
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        return None
    entries = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def write_manifest(directory, mode, params, shape):
    path = Path(directory) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in manifest_entries(mode, params, shape).items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def _split_shape(samples):
    return samples[0].image.shape if samples else (0, 0)


def proxy_paths(image_path, channels):
    image_path = Path(image_path)
    if channels == 1:
        return [image_path.with_name(f"{image_path.stem}_proxy.png")]
    return [image_path.with_name(f"{image_path.stem}_proxy_{c}.png") for c in range(channels)]


def write_cache(split_dir, samples, proxies, mode, params):
    """Write proxies beside `split_dir/<label>/<id>.png` and record the manifest"""
    mode = ProxyMode.parse(mode)
    split_dir = Path(split_dir)
    for sample, proxy in zip(samples, proxies):
        source = split_dir / sample.label / f"{sample.id}.png"
        for c, path in enumerate(proxy_paths(source, mode.channel_count)):
            save_png(path, proxy[..., c], bits=16)
    write_manifest(split_dir, mode, params, _split_shape(samples))
    log.info(f"✓ Cached {len(proxies)} proxies in {split_dir}")


def load_cache(split_dir, samples, mode, params):
    """Cached proxies for `samples`, or None when the cache is missing or stale"""
    mode = ProxyMode.parse(mode)
    split_dir = Path(split_dir)
    shape = _split_shape(samples)
    if read_manifest(split_dir) != manifest_entries(mode, params, shape):
        return None
    proxies = []
    for sample in samples:
        source = split_dir / sample.label / f"{sample.id}.png"
        paths = proxy_paths(source, mode.channel_count)
        if not all(p.exists() for p in paths):
            return None
        channels = [_read_png(p) for p in paths]
        if any(c.shape != sample.image.shape for c in channels):
            log.warning(f"⚠️  Cached proxy of {sample.id} does not match its image size, rebuilding")
            return None
        proxies.append(np.stack(channels, axis=-1).astype(np.float32))
    log.info(f"✓ Reusing {len(proxies)} cached proxies from {split_dir}")
    return proxies
