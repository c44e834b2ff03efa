"""Synthetic speaker-listener pairs with controllable coupling.

Speaker audio is pseudo-speech: amplitude-modulated tone bursts in fixed
time slots, each burst contributing one transcript token. The listener's
head pitch tracks the smoothed audio energy envelope and a block of the
listener's expression coefficients tracks the speaker's, both behind a
configurable lag and noise level. Because every coupling is planted by
construction, a trained model's ability to recover it is checkable.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audiofeat import AudioClip, frame_count, load_wav, save_wav
from .coeffspace import (
    BETA_DIM,
    POSE_DIM,
    CoefficientSequence,
    load_coefficient_sequence,
    save_coefficient_sequence,
)

__all__ = [
    "DyadConfig",
    "DyadicSample",
    "generate_dyad",
    "generate_dataset",
    "energy_envelope",
    "smooth_envelope",
    "write_sample",
    "read_sample",
    "write_dataset",
    "read_manifest",
    "read_split",
]

SLOT_SECONDS = 0.25
ACTIVE_FRACTION = 0.6
AMP_RANGE = (0.3, 0.9)
# eight tones a quarter octave apart, all well under Nyquist at 8 kHz
FREQ_VOCAB = tuple(220.0 * 2.0 ** (k / 4.0) for k in range(8))
SMOOTH_WINDOW = 5
POSE_GAIN = 0.6
EXPR_COUPLED_DIMS = 16
SPEAKER_BETA_AMP = 0.45
SPEAKER_POSE_AMP = 0.15


@dataclass(frozen=True)
class DyadConfig:
    """Knobs for one synthetic speaker-listener pair."""

    seed: int = 0
    duration_s: float = 2.0
    fps: float = 30.0
    sample_rate: int = 8000
    coupling_nod: float = 0.9
    coupling_expr: float = 0.9
    lag_frames: int = 3
    noise_sigma: float = 0.05

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.sample_rate < 8000:
            raise ValueError(f"sample_rate must be at least 8000, got {self.sample_rate}")
        for name in ("coupling_nod", "coupling_expr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.lag_frames < 0:
            raise ValueError(f"lag_frames must be non-negative, got {self.lag_frames}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")


@dataclass(frozen=True)
class DyadicSample:
    """One speaker-listener pair: audio, both coefficient tracks, transcript."""

    speaker_audio: AudioClip
    speaker_coeffs: CoefficientSequence
    listener_coeffs: CoefficientSequence
    transcript_tokens: tuple

    def __post_init__(self):
        if len(self.speaker_coeffs) != len(self.listener_coeffs):
            raise ValueError(
                f"speaker and listener lengths differ: "
                f"{len(self.speaker_coeffs)} vs {len(self.listener_coeffs)}"
            )
        expected = frame_count(self.speaker_audio, self.speaker_coeffs.fps)
        if len(self.speaker_coeffs) != expected:
            raise ValueError(
                f"coefficient length {len(self.speaker_coeffs)} does not match "
                f"audio duration ({expected} frames)"
            )
        object.__setattr__(self, "transcript_tokens", tuple(self.transcript_tokens))


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Edge-replicated moving average along axis 0."""
    half = window // 2
    padded = np.concatenate(
        [np.repeat(values[:1], half, axis=0), values, np.repeat(values[-1:], half, axis=0)],
        axis=0,
    )
    kernel = np.ones(window) / window
    if padded.ndim == 1:
        return np.convolve(padded, kernel, mode="valid")
    return np.stack(
        [np.convolve(padded[:, j], kernel, mode="valid") for j in range(padded.shape[1])],
        axis=1,
    )


def energy_envelope(clip: AudioClip, fps: float) -> np.ndarray:
    """Per-video-frame RMS of the audio, one value per frame."""
    t_frames = frame_count(clip, fps)
    samples = np.asarray(clip.samples, dtype=np.float64)
    env = np.zeros(t_frames)
    for t in range(t_frames):
        start = int(round(t * clip.sample_rate / fps))
        stop = int(round((t + 1) * clip.sample_rate / fps))
        seg = samples[start:stop]
        if seg.size:
            env[t] = math.sqrt(float(np.mean(np.square(seg))))
    return env


def smooth_envelope(env: np.ndarray, window: int = SMOOTH_WINDOW) -> np.ndarray:
    return _moving_average(np.asarray(env, dtype=np.float64), window)


def _lag_shift(values: np.ndarray, lag: int) -> np.ndarray:
    """Delay along axis 0 by lag frames, holding the first frame early on."""
    if lag == 0:
        return values.copy()
    head = np.repeat(values[:1], min(lag, values.shape[0]), axis=0)
    return np.concatenate([head, values[:-lag]], axis=0)[: values.shape[0]]


def generate_dyad(cfg: DyadConfig) -> DyadicSample:
    """Build one deterministic speaker-listener pair from its config."""
    rng = np.random.default_rng(cfg.seed)
    sr = cfg.sample_rate
    n_audio = int(round(cfg.duration_s * sr))
    audio = np.zeros(n_audio)

    slot_len = int(round(SLOT_SECONDS * sr))
    n_slots = max(1, int(math.ceil(n_audio / slot_len)))
    tokens = []
    for s in range(n_slots):
        active = bool(rng.random() < ACTIVE_FRACTION)
        if not active:
            continue
        freq_idx = int(rng.integers(0, len(FREQ_VOCAB)))
        amp = float(rng.uniform(*AMP_RANGE))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        start = s * slot_len
        stop = min(start + slot_len, n_audio)
        n = stop - start
        if n < 2:
            continue
        idx = np.arange(n)
        window = 0.5 - 0.5 * np.cos(2.0 * math.pi * idx / (n - 1))
        t_rel = idx / sr
        audio[start:stop] = amp * window * np.sin(
            2.0 * math.pi * FREQ_VOCAB[freq_idx] * t_rel + phase
        )
        tokens.append(f"f{freq_idx}")

    clip = AudioClip(samples=audio, sample_rate=sr)
    t_frames = frame_count(clip, cfg.fps)

    env = smooth_envelope(energy_envelope(clip, cfg.fps))
    # centering keeps the pitch signal inside the pose clamp without
    # touching its correlation structure
    centered = env - float(env.mean())

    spk_beta = np.clip(
        SPEAKER_BETA_AMP * _moving_average(rng.standard_normal((t_frames, BETA_DIM)), SMOOTH_WINDOW),
        -1.0,
        1.0,
    )
    spk_pose = np.clip(
        SPEAKER_POSE_AMP * _moving_average(rng.standard_normal((t_frames, POSE_DIM)), SMOOTH_WINDOW),
        -0.5,
        0.5,
    )

    pitch_noise = rng.standard_normal(t_frames)
    beta_noise = rng.standard_normal((t_frames, BETA_DIM))

    pitch = np.clip(
        cfg.coupling_nod * POSE_GAIN * _lag_shift(centered, cfg.lag_frames)
        + cfg.noise_sigma * pitch_noise,
        -0.5,
        0.5,
    )
    lis_pose = np.zeros((t_frames, POSE_DIM))
    lis_pose[:, 0] = pitch

    lis_beta = cfg.noise_sigma * beta_noise
    lis_beta[:, :EXPR_COUPLED_DIMS] += cfg.coupling_expr * _lag_shift(
        spk_beta[:, :EXPR_COUPLED_DIMS], cfg.lag_frames
    )
    lis_beta = np.clip(lis_beta, -1.0, 1.0)

    return DyadicSample(
        speaker_audio=clip,
        speaker_coeffs=CoefficientSequence(beta=spk_beta, pose=spk_pose, fps=cfg.fps),
        listener_coeffs=CoefficientSequence(beta=lis_beta, pose=lis_pose, fps=cfg.fps),
        transcript_tokens=tuple(tokens),
    )


def split_sizes(n: int, split) -> tuple:
    """Resolve split fractions into (train, val, test) counts.

    Val and test round half-up; train takes the remainder.
    """
    fractions = tuple(float(f) for f in split)
    if len(fractions) != 3:
        raise ValueError(f"split must have 3 fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"split fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    if n < 3 and all(f > 0 for f in fractions):
        raise ValueError(f"cannot cut {n} samples into three non-empty splits")
    n_val = int(math.floor(n * fractions[1] + 0.5))
    n_test = int(math.floor(n * fractions[2] + 0.5))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ValueError(f"split rounding left no room for training samples (n={n})")
    return n_train, n_val, n_test


def generate_dataset(cfg_base: DyadConfig, n: int, split=(0.8, 0.1, 0.1)) -> tuple:
    """Generate n samples (sample i reseeds to base + i) cut into three splits."""
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    n_train, n_val, n_test = split_sizes(n, split)
    samples = [
        generate_dyad(dataclasses.replace(cfg_base, seed=cfg_base.seed + i)) for i in range(n)
    ]
    return (
        samples[:n_train],
        samples[n_train : n_train + n_val],
        samples[n_train + n_val :],
    )


def write_sample(sample: DyadicSample, dirpath) -> None:
    """Write one sample as WAV + two coefficient CSVs + transcript text."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    save_wav(sample.speaker_audio, dirpath / "speaker.wav")
    save_coefficient_sequence(sample.speaker_coeffs, dirpath / "speaker.csv")
    save_coefficient_sequence(sample.listener_coeffs, dirpath / "listener.csv")
    (dirpath / "transcript.txt").write_text(
        " ".join(sample.transcript_tokens) + "\n", encoding="utf-8"
    )


def read_sample(dirpath) -> DyadicSample:
    dirpath = Path(dirpath)
    return DyadicSample(
        speaker_audio=load_wav(dirpath / "speaker.wav"),
        speaker_coeffs=load_coefficient_sequence(dirpath / "speaker.csv"),
        listener_coeffs=load_coefficient_sequence(dirpath / "listener.csv"),
        transcript_tokens=tuple((dirpath / "transcript.txt").read_text(encoding="utf-8").split()),
    )


def write_dataset(cfg_base: DyadConfig, n: int, split, out_dir) -> dict:
    """Materialize a dataset on disk and return its manifest."""
    out_dir = Path(out_dir)
    train, val, test = generate_dataset(cfg_base, n, split)
    names = {"train": [], "val": [], "test": []}
    index = 0
    for split_name, part in (("train", train), ("val", val), ("test", test)):
        for sample in part:
            name = f"sample_{index:04d}"
            write_sample(sample, out_dir / name)
            names[split_name].append(name)
            index += 1
    manifest = {
        "config": dataclasses.asdict(cfg_base),
        "n": n,
        "split": list(float(f) for f in split),
        "splits": names,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def read_manifest(out_dir) -> dict:
    path = Path(out_dir) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.json under {out_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def read_split(out_dir, split_name: str) -> list:
    """Load every sample of one split named by the on-disk manifest."""
    manifest = read_manifest(out_dir)
    if split_name not in manifest["splits"]:
        raise ValueError(f"unknown split {split_name!r}; manifest has {sorted(manifest['splits'])}")
    return [read_sample(Path(out_dir) / name) for name in manifest["splits"][split_name]]
