"""
Static images for reports: A_pix heat maps, reconstruction grids,
per-class score histograms and sweep curves.
"""

import base64
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

from .logs import get_logger  # noqa: E402

log = get_logger("eval")

# Saved PNGs must not depend on the matplotlib build
_PNG_METADATA = {"Software": None}

HEAT_MAP_LUT = None

# Colour stops at every 51st intensity: black, blue, cyan, green, yellow, red
_HEAT_MAP_STOPS = np.array([0, 51, 102, 153, 204, 255])
_HEAT_MAP_COLOURS = np.array([
    [0, 0, 0],
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
])


def _init_heat_map_lut():
    """Blue → cyan → green → yellow → red for every 8-bit intensity"""
    global HEAT_MAP_LUT
    if HEAT_MAP_LUT is not None:
        return

    intensities = np.arange(256)
    channels = [np.interp(intensities, _HEAT_MAP_STOPS, _HEAT_MAP_COLOURS[:, c]) for c in range(3)]
    HEAT_MAP_LUT = np.clip(np.round(np.stack(channels, axis=1)), 0, 255).astype(np.uint8)


def heat_map(a_pix, vmax=1.0):
    """RGB heat map of an A_pix map; values are clipped to [0, vmax]"""
    _init_heat_map_lut()
    scaled = np.clip(np.asarray(a_pix, dtype=np.float64) / vmax, 0.0, 1.0)
    return Image.fromarray(HEAT_MAP_LUT[np.round(scaled * 255).astype(np.uint8)], "RGB")


def save_heat_map(path, a_pix, vmax=1.0):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    heat_map(a_pix, vmax).save(path, format="PNG")
    return path


def to_base64_png(image: Image.Image):
    buffered = io.BytesIO()
    image.save(buffered, format="PNG", optimize=True, compress_level=6)
    return base64.b64encode(buffered.getvalue()).decode()


def _save_figure(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight", metadata=_PNG_METADATA)
    plt.close(fig)
    log.info(f"✓ Saved {path.name}")
    return path


def reconstruction_grid(path, rows):
    """
    One row per sample: I | P | P̂ | Î | A_pix

    `rows` is a list of dicts with keys id, image, proxy, proxy_hat,
    image_hat, a_pix (H×W arrays; proxies may be H×W×C, first channel
    shown).
    """
    columns = ["I", "P", "P̂", "Î", "A_pix"]
    fig, axes = plt.subplots(len(rows), len(columns), figsize=(2 * len(columns), 2 * len(rows)), squeeze=False)
    for r, row in enumerate(rows):
        panels = [row["image"], row["proxy"], row["proxy_hat"], row["image_hat"], row["a_pix"]]
        for c, panel in enumerate(panels):
            ax = axes[r, c]
            panel = np.asarray(panel)
            if panel.ndim == 3:
                panel = panel[..., 0] if panel.shape[-1] <= 2 else panel[0]
            if c == len(columns) - 1:
                ax.imshow(np.asarray(heat_map(panel)))
            else:
                ax.imshow(panel, cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(columns[c])
        axes[r, 0].set_ylabel(str(row.get("id", r)), fontsize=7)
    fig.tight_layout()
    return _save_figure(fig, path)


def score_histogram(path, scores, labels, score_name="a_img"):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(scores.min(), scores.max() if scores.max() > scores.min() else scores.min() + 1.0, 30)
    for label, color in (("normal", "tab:blue"), ("abnormal", "tab:red")):
        ax.hist(scores[labels == label], bins=bins, alpha=0.6, color=color, label=label)
    ax.set_xlabel(score_name)
    ax.set_ylabel("count")
    ax.legend()
    return _save_figure(fig, path)


def sweep_curve(path, param, values, aucs):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(values)), aucs, "o-", linewidth=2)
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels([str(v) for v in values])
    ax.set_xlabel(param)
    ax.set_ylabel("AUC")
    ax.grid(True, alpha=0.3)
    return _save_figure(fig, path)
