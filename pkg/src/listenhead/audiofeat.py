"""Audio front end: per-frame windowing, MFCC stacks, text embeddings.

Audio is converted to one feature row per video frame. MFCC analysis
windows are 25 ms Hann windows centered on each video frame's midpoint
(t + 0.5)/fps, so the stack aligns 1:1 with coefficient frames. Deltas
are regression deltas over +-2 neighbors with edge replication.

Text semantics come from pluggable providers: "stub" (deterministic
hashed vectors, unit norm) or "file:<path>" (precomputed [T x d] CSV).
Tokens carry no timing, so they are spread uniformly across frames.
"""

from __future__ import annotations

import dataclasses
import hashlib

import numpy as np
import scipy.fft
from scipy.io import wavfile

__all__ = [
    "AudioClip",
    "AudioFeatureStack",
    "TextEmbeddingStream",
    "load_wav",
    "save_wav",
    "frame_audio",
    "mfcc_stack",
    "embed_text",
    "stub_token_vector",
    "PRE_EMPHASIS",
    "ANALYSIS_WINDOW_SECONDS",
    "N_MEL_FILTERS",
    "LOG_ENERGY_FLOOR",
    "DELTA_RADIUS",
]

PRE_EMPHASIS = 0.97
ANALYSIS_WINDOW_SECONDS = 0.025
N_MEL_FILTERS = 26
LOG_ENERGY_FLOOR = 1e-20
DELTA_RADIUS = 2
DEFAULT_D_TEXT = 32


@dataclasses.dataclass(frozen=True)
class AudioClip:
    """Mono audio in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("audio must be mono (1-D sample vector)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio contains non-finite samples")
        if samples.size and (samples.min() < -1.0 or samples.max() > 1.0):
            raise ValueError("samples must lie in [-1, 1]")
        if self.sample_rate < 8000:
            raise ValueError("sample_rate must be at least 8000 Hz")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclasses.dataclass(frozen=True)
class AudioFeatureStack:
    """MFCC + delta + delta-delta matrices, one row per video frame."""

    mfcc: np.ndarray
    delta: np.ndarray
    delta2: np.ndarray
    fps: float

    def __post_init__(self):
        if not (self.mfcc.shape == self.delta.shape == self.delta2.shape):
            raise ValueError("mfcc/delta/delta2 must share a shape")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def n_frames(self) -> int:
        return self.mfcc.shape[0]

    def stacked(self) -> np.ndarray:
        """[T, 3*n_mfcc] concatenation used as the encoder input."""
        return np.concatenate([self.mfcc, self.delta, self.delta2], axis=1)


@dataclasses.dataclass(frozen=True)
class TextEmbeddingStream:
    """Per-frame text feature rows from one provider."""

    vectors: np.ndarray
    provider_id: str


def load_wav(path) -> AudioClip:
    """Read a mono RIFF WAV (PCM16 or float32) as an AudioClip."""
    sr, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: stereo audio rejected, supply a mono WAV")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    return AudioClip(samples, int(sr))


def save_wav(clip: AudioClip, path) -> None:
    wavfile.write(path, clip.sample_rate, clip.samples.astype(np.float32))


def frame_count(clip: AudioClip, fps: float) -> int:
    # the epsilon keeps e.g. 1.0 s at 30 fps from flooring to 29 frames
    return int(np.floor(clip.duration * fps + 1e-9))


def _extract_window(samples: np.ndarray, center: float, length: int) -> np.ndarray:
    """Window of `length` samples centered at fractional sample position."""
    start = int(round(center - length / 2.0))
    out = np.zeros(length)
    lo = max(start, 0)
    hi = min(start + length, samples.size)
    if hi > lo:
        out[lo - start : hi - start] = samples[lo:hi]
    return out


def frame_audio(clip: AudioClip, fps: float, context_frames: int = 0) -> np.ndarray:
    """Per-video-frame sample windows, [T, (1 + 2*context)*base] zero-padded.

    Window t is centered on the frame midpoint (t + 0.5)/fps.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    if context_frames < 0:
        raise ValueError("context_frames must be non-negative")
    if clip.duration < 1.0 / fps:
        raise ValueError("clip too short: needs at least one frame of audio")
    base = int(round(clip.sample_rate / fps))
    length = (1 + 2 * context_frames) * base
    T = frame_count(clip, fps)
    out = np.empty((T, length))
    for t in range(T):
        center = (t + 0.5) / fps * clip.sample_rate
        out[t] = _extract_window(clip.samples, center, length)
    return out


def mel_filterbank(sample_rate: int, n_fft: int, n_filters: int) -> np.ndarray:
    """Triangular mel filters evaluated at rfft bin frequencies, [M, bins]."""
    mel_max = 2595.0 * np.log10(1.0 + (sample_rate / 2.0) / 700.0)
    edges_hz = 700.0 * (10.0 ** (np.linspace(0.0, mel_max, n_filters + 2) / 2595.0) - 1.0)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    fb = np.zeros((n_filters, freqs.size))
    for m in range(n_filters):
        lo, mid, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def regression_delta(rows: np.ndarray, radius: int = DELTA_RADIUS) -> np.ndarray:
    """d_t = sum_n n*(c_{t+n} - c_{t-n}) / (2*sum n^2), edges replicated."""
    T = rows.shape[0]
    padded = np.pad(rows, ((radius, radius), (0, 0)), mode="edge")
    num = np.zeros_like(rows)
    for n in range(1, radius + 1):
        num += n * (padded[radius + n : radius + n + T] - padded[radius - n : radius - n + T])
    return num / (2.0 * sum(n * n for n in range(1, radius + 1)))


def mfcc_stack(clip: AudioClip, fps: float, n_mfcc: int = 13) -> AudioFeatureStack:
    """MFCC + regression deltas, one row per video frame."""
    if not 8 <= n_mfcc <= 40:
        raise ValueError("n_mfcc must lie in [8, 40]")
    if fps <= 0:
        raise ValueError("fps must be positive")
    n_window = int(round(ANALYSIS_WINDOW_SECONDS * clip.sample_rate))
    if clip.samples.size < n_window:
        raise ValueError("clip shorter than one analysis window")
    if clip.duration < 1.0 / fps:
        raise ValueError("clip too short: needs at least one frame of audio")

    emphasized = np.empty_like(clip.samples)
    emphasized[0] = clip.samples[0]
    emphasized[1:] = clip.samples[1:] - PRE_EMPHASIS * clip.samples[:-1]

    # more filters than the default 26 only when n_mfcc demands it
    n_filters = max(N_MEL_FILTERS, n_mfcc)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_window) / (n_window - 1))
    fb = mel_filterbank(clip.sample_rate, n_window, n_filters)

    T = frame_count(clip, fps)
    frames = np.empty((T, n_window))
    for t in range(T):
        center = (t + 0.5) / fps * clip.sample_rate
        frames[t] = _extract_window(emphasized, center, n_window)
    spectra = np.fft.rfft(frames * window, n=n_window, axis=1)
    power = spectra.real**2 + spectra.imag**2
    energies = power @ fb.T
    log_e = np.log(np.maximum(energies, LOG_ENERGY_FLOOR))
    coeffs = scipy.fft.dct(log_e, type=2, norm="ortho", axis=1)[:, :n_mfcc]

    delta = regression_delta(coeffs)
    delta2 = regression_delta(delta)
    return AudioFeatureStack(coeffs, delta, delta2, float(fps))


def stub_token_vector(token: str, d_text: int = DEFAULT_D_TEXT) -> np.ndarray:
    """Deterministic unit vector derived from the token's content hash."""
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.normal(size=d_text)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        v[0] = 1.0
        norm = 1.0
    return v / norm


def embed_text(
    tokens,
    provider: str = "stub",
    n_frames: int | None = None,
    d_text: int = DEFAULT_D_TEXT,
) -> TextEmbeddingStream:
    """Per-frame text embeddings, tokens spread uniformly across frames.

    Token i covers frames [i*T/N, (i+1)*T/N); frame f therefore reads
    token floor(f*N/T). An empty token list yields all-zero rows.
    """
    if n_frames is None or n_frames < 1:
        raise ValueError("embed_text needs the aligned frame count n_frames")
    tokens = list(tokens)
    if provider == "stub":
        if not tokens:
            return TextEmbeddingStream(np.zeros((n_frames, d_text)), provider)
        token_vecs = np.stack([stub_token_vector(tok, d_text) for tok in tokens])
        owner = np.minimum(
            (np.arange(n_frames) * len(tokens)) // n_frames, len(tokens) - 1
        )
        return TextEmbeddingStream(token_vecs[owner], provider)
    if provider.startswith("file:"):
        path = provider[len("file:") :]
        mat = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        if mat.shape[0] != n_frames:
            raise ValueError(
                f"text embedding file has {mat.shape[0]} rows, expected {n_frames}"
            )
        return TextEmbeddingStream(mat, provider)
    raise ValueError(f"unknown text provider {provider!r}")
