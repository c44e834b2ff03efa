"""3DMM coefficient data model, CSV serialization, and frame differences.

A frame is an expression vector beta (R^64) plus a pose vector (R^6: three
rotation components in radians, then three translation components in
normalized screen units). Unused coefficient groups ride along in an
opaque `extra` block that is stored and re-serialized but never read.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

__all__ = [
    "BETA_DIM",
    "POSE_DIM",
    "DEFAULT_FPS",
    "CoefficientFormatError",
    "CoefficientFrame",
    "CoefficientSequence",
    "load_coefficient_sequence",
    "save_coefficient_sequence",
    "frame_delta",
]

BETA_DIM = 64
POSE_DIM = 6
DEFAULT_FPS = 30.0


class CoefficientFormatError(ValueError):
    """A coefficient CSV violated the format contract."""


def _as_finite(name: str, arr, dim: int) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.shape != (dim,):
        raise ValueError(f"{name} must have exactly {dim} entries, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


@dataclasses.dataclass(frozen=True)
class CoefficientFrame:
    """One frame of listener or speaker coefficients."""

    beta: np.ndarray
    pose: np.ndarray
    extra: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", _as_finite("beta", self.beta, BETA_DIM))
        object.__setattr__(self, "pose", _as_finite("pose", self.pose, POSE_DIM))
        if self.extra is not None:
            extra = np.asarray(self.extra, dtype=np.float64)
            if extra.ndim != 1:
                raise ValueError("extra must be a flat vector")
            object.__setattr__(self, "extra", extra)


class CoefficientSequence:
    """An ordered run of coefficient frames at a fixed frame rate.

    Stored as [T, dim] matrices for efficiency; indexing yields
    CoefficientFrame views.
    """

    __slots__ = ("beta", "pose", "extra", "fps")

    def __init__(self, beta, pose, fps: float = DEFAULT_FPS, extra=None):
        beta = np.asarray(beta, dtype=np.float64)
        pose = np.asarray(pose, dtype=np.float64)
        if beta.ndim != 2 or beta.shape[1] != BETA_DIM:
            raise ValueError(f"beta matrix must be [T, {BETA_DIM}], got {beta.shape}")
        if pose.ndim != 2 or pose.shape[1] != POSE_DIM:
            raise ValueError(f"pose matrix must be [T, {POSE_DIM}], got {pose.shape}")
        if beta.shape[0] != pose.shape[0]:
            raise ValueError("beta and pose must cover the same frames")
        if beta.shape[0] < 1:
            raise ValueError("empty sequence")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(pose))):
            raise ValueError("coefficients contain non-finite entries")
        if not fps > 0:
            raise ValueError("fps must be positive")
        if extra is not None:
            extra = np.asarray(extra, dtype=np.float64)
            if extra.ndim != 2 or extra.shape[0] != beta.shape[0]:
                raise ValueError("extra matrix must have one row per frame")
        self.beta = beta
        self.pose = pose
        self.extra = extra
        self.fps = float(fps)

    @classmethod
    def from_frames(cls, frames, fps: float = DEFAULT_FPS) -> "CoefficientSequence":
        frames = list(frames)
        if not frames:
            raise ValueError("empty sequence")
        widths = {0 if f.extra is None else f.extra.shape[0] for f in frames}
        if len(widths) > 1:
            raise ValueError("frames disagree on extra width")
        beta = np.stack([f.beta for f in frames])
        pose = np.stack([f.pose for f in frames])
        extra = None
        if widths.pop() > 0:
            extra = np.stack([f.extra for f in frames])
        return cls(beta, pose, fps=fps, extra=extra)

    def __len__(self) -> int:
        return self.beta.shape[0]

    def __getitem__(self, t: int) -> CoefficientFrame:
        extra = None if self.extra is None else self.extra[t]
        return CoefficientFrame(self.beta[t], self.pose[t], extra)

    def __iter__(self):
        for t in range(len(self)):
            yield self[t]


def _expected_header(n_extra: int) -> list[str]:
    cols = ["frame"]
    cols += [f"beta_{i}" for i in range(BETA_DIM)]
    cols += [f"pose_{i}" for i in range(POSE_DIM)]
    cols += [f"extra_{i}" for i in range(n_extra)]
    return cols


def load_coefficient_sequence(path) -> CoefficientSequence:
    """Parse a coefficient CSV; errors carry row and column positions."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such coefficient file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    fps = DEFAULT_FPS
    lineno = 0
    while lineno < len(lines) and (not lines[lineno].strip() or lines[lineno].lstrip().startswith("#")):
        stripped = lines[lineno].lstrip()
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if body.startswith("fps="):
                try:
                    fps = float(body[4:])
                except ValueError:
                    raise CoefficientFormatError(
                        f"line {lineno + 1}: cannot parse fps value {body[4:]!r}"
                    ) from None
        lineno += 1
    if lineno >= len(lines):
        raise CoefficientFormatError("file has no header row")

    header = [c.strip() for c in lines[lineno].split(",")]
    base = 1 + BETA_DIM + POSE_DIM
    n_extra = max(len(header) - base, 0)
    expected = _expected_header(n_extra)
    for j in range(max(len(header), len(expected))):
        got = header[j] if j < len(header) else None
        want = expected[j] if j < len(expected) else None
        if got != want:
            if got is None:
                raise CoefficientFormatError(
                    f"malformed header: missing column {want!r} at position {j + 1}"
                )
            raise CoefficientFormatError(
                f"malformed header: column {j + 1} should be {want!r}, found {got!r}"
            )
    lineno += 1

    rows = []
    frame_no = 0
    for raw_index in range(lineno, len(lines)):
        line = lines[raw_index]
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise CoefficientFormatError(
                f"row {frame_no}: expected {len(header)} columns, found {len(cells)}"
            )
        values = np.empty(len(cells) - 1)
        try:
            idx = int(cells[0])
        except ValueError:
            raise CoefficientFormatError(
                f"row {frame_no}, column 'frame': non-numeric cell {cells[0]!r}"
            ) from None
        if idx != frame_no:
            raise CoefficientFormatError(
                f"row {frame_no}: frame index must be {frame_no}, found {idx}"
            )
        for j, cell in enumerate(cells[1:], start=1):
            try:
                values[j - 1] = float(cell)
            except ValueError:
                raise CoefficientFormatError(
                    f"row {frame_no}, column {header[j]!r}: non-numeric cell {cell.strip()!r}"
                ) from None
        rows.append(values)
        frame_no += 1

    if not rows:
        raise CoefficientFormatError("file contains a header but no frames")
    data = np.vstack(rows)
    beta = data[:, :BETA_DIM]
    pose = data[:, BETA_DIM : BETA_DIM + POSE_DIM]
    extra = data[:, BETA_DIM + POSE_DIM :] if n_extra else None
    try:
        return CoefficientSequence(beta, pose, fps=fps, extra=extra)
    except ValueError as e:
        raise CoefficientFormatError(str(e)) from None


def save_coefficient_sequence(seq: CoefficientSequence, path) -> None:
    """Write a sequence as CSV with full round-trip precision."""
    if len(seq) == 0:
        raise ValueError("empty sequence")
    n_extra = 0 if seq.extra is None else seq.extra.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# fps={seq.fps!r}\n")
        fh.write(",".join(_expected_header(n_extra)) + "\n")
        for t in range(len(seq)):
            cells = [str(t)]
            cells += [repr(float(v)) for v in seq.beta[t]]
            cells += [repr(float(v)) for v in seq.pose[t]]
            if n_extra:
                cells += [repr(float(v)) for v in seq.extra[t]]
            fh.write(",".join(cells) + "\n")


def frame_delta(seq: CoefficientSequence):
    """First differences: element t is frame[t+1] - frame[t], per part."""
    if len(seq) < 2:
        raise ValueError("frame_delta needs a sequence of length >= 2")
    dbeta = np.diff(seq.beta, axis=0)
    dpose = np.diff(seq.pose, axis=0)
    return [(dbeta[t], dpose[t]) for t in range(len(seq) - 1)]
