"""Channel-wise two-cluster image segmentation with normal mixtures.

Each RGB channel is mapped through y = Phi^{-1}((x + 1/N) / (1 + 2/N)),
fitted with a 2-component normal mixture, and every pixel is assigned by the
maximum-posterior rule.  The three binary labelings give 8 refined clusters.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy import special

from .distributions import NORMAL, MixingDistribution, map_classify
from .mwde import MwdeConfig, fit_mwde
from .pmle import PmleConfig, fit_pmle

log = logging.getLogger(__name__)

CHANNELS = ("red", "green", "blue")
ESTIMATORS = ("pmle", "mwde")
TABLE_COLUMNS = ["channel", "estimator", "w1", "w2", "mu1", "mu2", "sigma1", "sigma2"]


class ImageFormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# netpbm I/O
# --------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_header(data: bytes, magic: bytes):
    pos = 0
    fields = []
    while len(fields) < 4:
        m = _TOKEN.match(data, pos)
        if not m:
            raise ImageFormatError("truncated netpbm header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != magic:
        raise ImageFormatError(f"expected {magic.decode()} image, got {fields[0][:2]!r}")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageFormatError("malformed netpbm header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError("invalid image dimensions or maxval")
    return width, height, maxval, pos + 1  # one whitespace byte before raster


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6) as a float array ``(height, width, 3)`` in [0, 1]."""
    data = Path(path).read_bytes()
    width, height, maxval, start = _parse_header(data, b"P6")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = width * height * 3
    if len(data) - start < count * np.dtype(dtype).itemsize:
        raise ImageFormatError("truncated PPM raster")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=start)
    return raster.reshape(height, width, 3).astype(float) / maxval


def _to_bytes(img: np.ndarray) -> bytes:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).tobytes()


def write_ppm(path, img: np.ndarray):
    img = np.asarray(img, dtype=float)
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + _to_bytes(img))


def write_pgm(path, plane: np.ndarray):
    """8-bit P5 from values in [0, 255]."""
    plane = np.asarray(plane)
    h, w = plane.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + plane.astype(np.uint8).tobytes())


# --------------------------------------------------------------------------
# segmentation
# --------------------------------------------------------------------------

def transform_intensity(x, n_pixels: int):
    """Phi^{-1}((x + 1/N) / (1 + 2/N)); finite for every x in [0, 1]."""
    if n_pixels < 1:
        raise ValueError("n_pixels must be at least 1")
    x = np.asarray(x, dtype=float)
    out = special.ndtri((x + 1.0 / n_pixels) / (1.0 + 2.0 / n_pixels))
    return float(out) if out.ndim == 0 else out


@dataclass
class ChannelFit:
    channel: str
    estimator: str
    g_hat: Optional[MixingDistribution]
    labels: np.ndarray  # 1 or 2 per pixel
    recolored: np.ndarray
    diagnostic: str = ""

    def table_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"channel": self.channel, "estimator": self.estimator}
        g = self.g_hat if self.g_hat is not None and self.g_hat.K == 2 else None
        for name, attr in (("w", "weights"), ("mu", "locations"), ("sigma", "scales")):
            for k in (0, 1):
                row[f"{name}{k + 1}"] = None if g is None else float(getattr(g, attr)[k])
        return row


@dataclass
class SegmentationResult:
    estimator: str
    channels: List[ChannelFit]
    combined: np.ndarray  # (h, w, 3)
    refined_labels: np.ndarray  # 0..7

    def table(self) -> List[Dict[str, object]]:
        return [c.table_row() for c in self.channels]


def _fit_channel(y, estimator, n_starts, seed):
    if estimator == "mwde":
        return fit_mwde(y, NORMAL, 2, MwdeConfig(n_starts=n_starts, seed=seed)).g_hat
    return fit_pmle(y, NORMAL, 2, PmleConfig(n_starts=n_starts, seed=seed)).g_hat


def _recolor(x, labels):
    out = np.empty_like(x)
    for lab in np.unique(labels):
        sel = labels == lab
        out[sel] = x[sel].mean()
    return out


def segment_channel(x: np.ndarray, estimator: str, name: str = "", n_starts: int = 5,
                    seed: int = 0) -> ChannelFit:
    """Fit one channel of original intensities ``x`` (any shape)."""
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    shape = x.shape
    flat = x.ravel()
    y = transform_intensity(flat, flat.size)
    diagnostic = ""
    g = None
    if np.ptp(y) == 0:
        diagnostic = "constant channel; single cluster"
    else:
        try:
            g = _fit_channel(y, estimator, n_starts, seed).sorted_by_location()
        except (ArithmeticError, ValueError) as exc:
            diagnostic = f"fit failed ({exc}); single cluster"
    if g is None:
        log.warning("%s channel: %s", name or "?", diagnostic)
        labels = np.ones(flat.size, dtype=np.int64)
    else:
        labels = map_classify(g, NORMAL, y) + 1
    return ChannelFit(name, estimator, g, labels.reshape(shape), _recolor(flat, labels).reshape(shape),
                      diagnostic)


def segment(image: np.ndarray, estimator: str = "pmle", n_starts: int = 5, seed: int = 0,
            executor=None) -> SegmentationResult:
    """Segment an ``(h, w, 3)`` image of intensities in [0, 1]."""
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3 or min(image.shape[:2]) < 1:
        raise ImageFormatError("expected an (height, width, 3) image")
    if np.any(image < 0) or np.any(image > 1):
        raise ImageFormatError("intensities must lie in [0, 1]")
    args = [(image[..., c], estimator, CHANNELS[c], n_starts, seed) for c in range(3)]
    if executor is None:
        fits = [segment_channel(*a) for a in args]
    else:
        fits = list(executor.map(segment_channel, *zip(*args)))
    refined = sum((fits[c].labels - 1) << (2 - c) for c in range(3))
    combined = np.empty_like(image)
    for lab in np.unique(refined):
        sel = refined == lab
        combined[sel] = image[sel].mean(axis=0)
    return SegmentationResult(estimator, fits, combined, refined)


def transformed_histogram(x: np.ndarray, bins: int = 64):
    """Histogram of transformed intensities: ``(left_edges, right_edges, counts)``."""
    flat = np.asarray(x, dtype=float).ravel()
    y = transform_intensity(flat, flat.size)
    counts, edges = np.histogram(y, bins=bins)
    return edges[:-1], edges[1:], counts


def table_to_csv(rows: List[Dict[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(float(r[c])) if isinstance(r[c], float) else r[c])
                    for c in TABLE_COLUMNS])
    return buf.getvalue()
