"""Evaluation metrics for listener-motion generation.

Nine numbers total: PSNR / SSIM / CPBD on grayscale images, mean absolute
error and Frechet distance on expression and pose coefficients, and
Frechet distance / cosine similarity on precomputed embedding files.
Everything here is pure numpy with a fixed aggregation order, so repeated
runs over the same inputs produce byte-identical reports.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .hiercoder import cosine_similarity

__all__ = [
    "METRIC_ORDER",
    "GrayImage",
    "GaussianSummary",
    "EmbeddingSet",
    "load_gray_image",
    "save_gray_image",
    "load_embeddings",
    "psnr",
    "ssim",
    "cpbd",
    "coeff_l1",
    "coeff_frechet",
    "gaussian_summary",
    "frechet_distance",
    "csim",
    "embedding_frechet",
    "format_report",
    "parse_report",
    "aggregate_reports",
    "write_report",
    "read_report",
]

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Sharpness constants; exposed as keyword arguments because the exact
# values used by any given evaluation harness vary.
CPBD_MIN_SIZE = 64
CPBD_GRAD_THRESHOLD = 0.08
CPBD_CONTRAST_THRESHOLD = 50.0 / 255.0
CPBD_WIDTH_LOW_CONTRAST = 5.0
CPBD_WIDTH_HIGH_CONTRAST = 3.0
CPBD_BETA = 3.6
CPBD_P_JNB = 0.63

# Canonical report order; every report and aggregate lists metrics this way.
METRIC_ORDER = (
    "PSNR",
    "SSIM",
    "CPBD",
    "FID",
    "CSIM",
    "ExpL1",
    "PoseL1",
    "ExpFD",
    "PoseFD",
)


@dataclass(frozen=True)
class GrayImage:
    """A grayscale image with pixel values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image pixels must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image pixels must be finite")
        if float(px.min()) < 0.0 or float(px.max()) > 1.0:
            raise ValueError("image pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass(frozen=True)
class GaussianSummary:
    """First and second moments of a sample, as used by Frechet distances."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or mean.shape[0] < 1:
            raise ValueError(f"summary mean must be a non-empty vector, got shape {mean.shape}")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("summary moments must be finite")
        if float(np.max(np.abs(cov - cov.T))) > 1e-9:
            raise ValueError("covariance must be symmetric within 1e-9")
        if int(self.n) < 2:
            raise ValueError(f"summary needs at least 2 samples, got {self.n}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))
        object.__setattr__(self, "n", int(self.n))


@dataclass(frozen=True)
class EmbeddingSet:
    """Rows of precomputed feature vectors, one per evaluated frame."""

    vectors: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[0] < 1 or vec.shape[1] < 1:
            raise ValueError(f"embedding vectors must be a non-empty [N, d] matrix, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding vectors must be finite")
        object.__setattr__(self, "vectors", vec)


def load_gray_image(path) -> GrayImage:
    """Read a PNG or PGM file as a GrayImage.

    8-bit data maps to [0, 1] by /255; 16-bit grayscale by /65535; color
    inputs collapse to luma with weights 0.299 / 0.587 / 0.114.
    """
    with Image.open(path) as img:
        if img.mode == "L":
            px = np.asarray(img, dtype=np.float64) / 255.0
        elif img.mode == "I;16":
            px = np.asarray(img, dtype=np.float64) / 65535.0
        else:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
            px = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255.0
    # the luma weights sum to 1 only up to float rounding; clamp the residue
    return GrayImage(np.clip(px, 0.0, 1.0))


def save_gray_image(img: GrayImage, path) -> None:
    """Write an 8-bit grayscale PNG or PGM (format chosen by extension)."""
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


def load_embeddings(path, source_id: str | None = None) -> EmbeddingSet:
    """Read an embedding set from a CSV file with one d-float row per frame."""
    vec = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return EmbeddingSet(vectors=vec, source_id=str(path) if source_id is None else source_id)


def _require_same_shape(a: GrayImage, b: GrayImage, op: str) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(
            f"{op} needs equal image dimensions, got {a.height}x{a.width} and {b.height}x{b.width}"
        )


def psnr(a: GrayImage, b: GrayImage, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give math.inf."""
    _require_same_shape(a, b, "psnr")
    mse = float(np.mean(np.square(a.pixels - b.pixels)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a: GrayImage, b: GrayImage, peak: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity over uniform sliding windows.

    Window moments are biased (divide by the pixel count), matching the
    usual formulation where the window acts as a probability mass.
    """
    _require_same_shape(a, b, "ssim")
    if a.height < window or a.width < window:
        raise ValueError(f"ssim needs at least {window}x{window} pixels, got {a.height}x{a.width}")
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    wx = sliding_window_view(a.pixels, (window, window))
    wy = sliding_window_view(b.pixels, (window, window))
    mx = wx.mean(axis=(-2, -1))
    my = wy.mean(axis=(-2, -1))
    vx = np.square(wx).mean(axis=(-2, -1)) - np.square(mx)
    vy = np.square(wy).mean(axis=(-2, -1)) - np.square(my)
    cxy = (wx * wy).mean(axis=(-2, -1)) - mx * my
    score = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / (
        (np.square(mx) + np.square(my) + c1) * (vx + vy + c2)
    )
    return float(score.mean())


def _sobel_rows(px: np.ndarray) -> np.ndarray:
    """Horizontal Sobel gradient, scaled so a unit step responds with 0.5.

    Border pixels stay zero; widths are only measured at interior columns.
    """
    grad = np.zeros_like(px)
    grad[1:-1, 1:-1] = (
        px[:-2, 2:] + 2.0 * px[1:-1, 2:] + px[2:, 2:]
        - px[:-2, :-2] - 2.0 * px[1:-1, :-2] - px[2:, :-2]
    ) / 8.0
    return grad


def _edge_extrema(row: np.ndarray, col: int, rising: bool) -> tuple[int, int]:
    """Walk left and right from an edge pixel to the nearest local extrema.

    For a rising edge the left stop is a local minimum and the right stop a
    local maximum; falling edges mirror that. Plateaus end the walk, so a
    hard two-level step measures width 1.
    """
    n = row.shape[0]
    left = col
    right = col
    if rising:
        while left > 0 and row[left - 1] < row[left]:
            left -= 1
        while right + 1 < n and row[right + 1] > row[right]:
            right += 1
    else:
        while left > 0 and row[left - 1] > row[left]:
            left -= 1
        while right + 1 < n and row[right + 1] < row[right]:
            right += 1
    return left, right


def cpbd(
    a: GrayImage,
    *,
    grad_threshold: float = CPBD_GRAD_THRESHOLD,
    contrast_threshold: float = CPBD_CONTRAST_THRESHOLD,
    width_low_contrast: float = CPBD_WIDTH_LOW_CONTRAST,
    width_high_contrast: float = CPBD_WIDTH_HIGH_CONTRAST,
    beta: float = CPBD_BETA,
    p_jnb: float = CPBD_P_JNB,
) -> float:
    """No-reference sharpness: the fraction of edges below the blur threshold.

    Edges come from a row-wise Sobel filter; each edge's width is the pixel
    distance between the local extrema bracketing it. The just-noticeable
    width is two-level in the edge contrast, blur probability is
    1 - exp(-(width / w_jnb) ** beta), and an edge counts as sharp when that
    probability stays at or below p_jnb. An image with no detected edges
    scores 0.0 and raises a warning.
    """
    if a.height < CPBD_MIN_SIZE or a.width < CPBD_MIN_SIZE:
        raise ValueError(
            f"cpbd needs at least {CPBD_MIN_SIZE}x{CPBD_MIN_SIZE} pixels, got {a.height}x{a.width}"
        )
    px = a.pixels
    grad = _sobel_rows(px)
    rows, cols = np.nonzero(np.abs(grad) >= grad_threshold)
    if rows.size == 0:
        warnings.warn("no edges detected; sharpness is undefined, returning 0.0", stacklevel=2)
        return 0.0
    sharp = 0
    for r, c in zip(rows.tolist(), cols.tolist()):
        row = px[r]
        left, right = _edge_extrema(row, c, rising=bool(grad[r, c] > 0.0))
        width = right - left
        contrast = abs(float(row[right]) - float(row[left]))
        w_jnb = width_low_contrast if contrast <= contrast_threshold else width_high_contrast
        p_blur = 1.0 - math.exp(-((width / w_jnb) ** beta))
        if p_blur <= p_jnb:
            sharp += 1
    return sharp / rows.size


def _coeff_part(seq, part: str) -> np.ndarray:
    if part == "expression":
        return seq.beta
    if part == "pose":
        return seq.pose
    raise ValueError(f"unknown coefficient part {part!r}; expected 'expression' or 'pose'")


def coeff_l1(pred, gt, part: str) -> float:
    """Mean absolute error over frames and dimensions of one coefficient part."""
    if len(pred) != len(gt):
        raise ValueError(f"sequence lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < 1:
        raise ValueError("coeff_l1 needs at least one frame")
    return float(np.mean(np.abs(_coeff_part(pred, part) - _coeff_part(gt, part))))


def gaussian_summary(samples) -> GaussianSummary:
    """Sample mean and unbiased covariance, symmetrized for safety."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"samples must be an [N, d] matrix, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples must be finite")
    mean = arr.mean(axis=0)
    dev = arr - mean
    cov = dev.T @ dev / (arr.shape[0] - 1)
    return GaussianSummary(mean=mean, cov=0.5 * (cov + cov.T), n=arr.shape[0])


def _psd_sqrt(mat: np.ndarray, label: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    low = float(vals.min())
    if low < -1e-8:
        raise ValueError(f"{label} is not positive semi-definite (eigenvalue {low:.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary, squared: bool = True) -> float:
    """Frechet distance between two Gaussian summaries.

    Computed as |mean difference|^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^1/2)
    with the cross square root taken through the symmetrized product
    sqrt(cov_a) cov_b sqrt(cov_a), which shares its spectrum and stays
    Hermitian. Eigenvalues above -1e-8 are clipped to zero; anything lower
    is treated as a failure. Squared by default; pass squared=False for the
    metric proper.
    """
    if a.mean.shape[0] != b.mean.shape[0]:
        raise ValueError(f"summary dimensions differ: {a.mean.shape[0]} vs {b.mean.shape[0]}")
    diff = a.mean - b.mean
    root_a = _psd_sqrt(a.cov, "first covariance")
    inner = root_a @ b.cov @ root_a
    inner = 0.5 * (inner + inner.T)
    vals = np.linalg.eigh(inner)[0]
    low = float(vals.min())
    if low < -1e-8:
        raise ValueError(f"covariance square root failed (eigenvalue {low:.3e})")
    cross = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    tr_a = float(np.trace(a.cov))
    tr_b = float(np.trace(b.cov))
    d2 = float(diff @ diff) + tr_a + tr_b - 2.0 * cross
    # exact arithmetic keeps d2 >= 0; sqrt noise on clipped eigenvalues can
    # push it slightly negative, so clip relative to the covariance scale
    if d2 < -1e-3 * max(1.0, tr_a + tr_b):
        raise ValueError(f"negative squared distance {d2:.3e}; numerical failure")
    d2 = max(d2, 0.0)
    return d2 if squared else math.sqrt(d2)


def coeff_frechet(pred, gt, part: str, squared: bool = True) -> float:
    """Frechet distance between the per-part coefficient distributions."""
    return frechet_distance(
        gaussian_summary(_coeff_part(pred, part)),
        gaussian_summary(_coeff_part(gt, part)),
        squared=squared,
    )


def csim(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Mean cosine similarity over aligned embedding rows."""
    if a.vectors.shape != b.vectors.shape:
        raise ValueError(f"embedding shapes differ: {a.vectors.shape} vs {b.vectors.shape}")
    vals = [cosine_similarity(a.vectors[i], b.vectors[i]) for i in range(a.vectors.shape[0])]
    return float(np.mean(vals))


def embedding_frechet(a: EmbeddingSet, b: EmbeddingSet, squared: bool = True) -> float:
    """Frechet distance between two embedding distributions."""
    return frechet_distance(
        gaussian_summary(a.vectors), gaussian_summary(b.vectors), squared=squared
    )


def _format_value(v) -> str:
    if v is None:
        return "n/a"
    v = float(v)
    if math.isinf(v):
        return "inf"
    return f"{v:.6f}"


def format_report(values: dict) -> str:
    """Render metric values as 'Name = value' lines in canonical order.

    Values print with 6 decimals; math.inf prints as 'inf' and None as
    'n/a'. Unknown metric names are rejected rather than silently dropped.
    """
    unknown = sorted(set(values) - set(METRIC_ORDER))
    if unknown:
        raise ValueError(f"unknown metric names: {', '.join(unknown)}")
    lines = [f"{name} = {_format_value(values[name])}" for name in METRIC_ORDER if name in values]
    return "".join(line + "\n" for line in lines)


def parse_report(text: str) -> dict:
    """Inverse of format_report; 'inf' maps to math.inf and 'n/a' to None."""
    values = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        name, sep, val = line.partition(" = ")
        if not sep or name not in METRIC_ORDER:
            raise ValueError(f"malformed report line: {raw!r}")
        values[name] = None if val == "n/a" else float(val)
    return values


def aggregate_reports(reports: list) -> dict:
    """Average a list of per-pair reports into one.

    For each metric the finite per-pair values are averaged; pairs where
    the metric is undefined (n/a) are skipped. When every defined value is
    infinite the aggregate stays inf, and a metric absent from every report
    is absent from the aggregate.
    """
    out = {}
    for name in METRIC_ORDER:
        vals = [r[name] for r in reports if name in r and r[name] is not None]
        if not vals:
            continue
        finite = [v for v in vals if math.isfinite(v)]
        if finite:
            out[name] = float(np.mean(finite))
        else:
            out[name] = math.inf
    return out


def write_report(path, values: dict) -> None:
    Path(path).write_text(format_report(values), encoding="utf-8")


def read_report(path) -> dict:
    return parse_report(Path(path).read_text(encoding="utf-8"))
