"""Channel-attention fusion of audio streams and cross-modal mixing.

fuse_audio concatenates the five per-frame streams (high/mid/low pyramid
levels, text features, MFCC stack row), applies a squeeze-excitation gate
over the concatenated channels, and projects linearly to d_fused.
fuse_cross_modal concatenates the speaker's expression and pose with the
fused audio vector and applies a two-layer tanh perceptron to d_xm.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .coeffspace import BETA_DIM, POSE_DIM

__all__ = [
    "SEGateParams",
    "FusionParams",
    "CrossModalParams",
    "init_se_gate_params",
    "init_fusion_params",
    "init_cross_modal_params",
    "se_gate_rows",
    "se_gate",
    "fuse_audio_rows",
    "fuse_audio",
    "fuse_cross_modal_rows",
    "fuse_cross_modal",
]

SE_RATIO = 4


@dataclasses.dataclass
class SEGateParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    def named(self, prefix: str) -> dict:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


@dataclasses.dataclass
class FusionParams:
    se: SEGateParams
    out_w: Tensor
    out_b: Tensor

    def named(self, prefix: str = "fus") -> dict:
        out = self.se.named(f"{prefix}.se")
        out[f"{prefix}.out_w"] = self.out_w
        out[f"{prefix}.out_b"] = self.out_b
        return out


@dataclasses.dataclass
class CrossModalParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str = "xm") -> dict:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


def _scaled(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape))


def init_se_gate_params(dim: int, rng: np.random.Generator) -> SEGateParams:
    hidden = max(1, dim // SE_RATIO)
    return SEGateParams(
        w1=_scaled(rng, (dim, hidden), dim),
        b1=ad.parameter(np.zeros(hidden)),
        w2=_scaled(rng, (hidden, dim), hidden),
        b2=ad.parameter(np.zeros(dim)),
    )


def init_fusion_params(
    d_proj: int, d_text: int, d_mfcc: int, d_fused: int, rng: np.random.Generator
) -> FusionParams:
    d_cat = 3 * d_proj + d_text + d_mfcc
    return FusionParams(
        se=init_se_gate_params(d_cat, rng),
        out_w=_scaled(rng, (d_cat, d_fused), d_cat),
        out_b=ad.parameter(np.zeros(d_fused)),
    )


def init_cross_modal_params(d_fused: int, d_xm: int, rng: np.random.Generator) -> CrossModalParams:
    d_in = BETA_DIM + POSE_DIM + d_fused
    return CrossModalParams(
        w1=_scaled(rng, (d_in, d_xm), d_in),
        b1=ad.parameter(np.zeros(d_xm)),
        w2=_scaled(rng, (d_xm, d_xm), d_xm),
        b2=ad.parameter(np.zeros(d_xm)),
    )


def se_gate_rows(x: Tensor, params: SEGateParams) -> Tensor:
    """x * sigmoid(relu(x w1 + b1) w2 + b2) over [N, d] rows.

    Per-frame vectors need no pooling, so the squeeze step is the identity.
    """
    if x.shape[-1] != params.dim:
        raise ValueError(f"se_gate expects width {params.dim}, got {x.shape[-1]}")
    hidden = ad.relu(ad.add(ad.matmul(x, params.w1), params.b1))
    gate = ad.sigmoid(ad.add(ad.matmul(hidden, params.w2), params.b2))
    return ad.mul(x, gate)


def se_gate(channels, params: SEGateParams) -> np.ndarray:
    """Single-vector convenience wrapper around se_gate_rows."""
    vec = np.asarray(channels, dtype=np.float64).reshape(1, -1)
    with ad.no_grad():
        out = se_gate_rows(ad.tensor(vec), params)
    return out.data[0]


def fuse_audio_rows(high, mid, low, s_t, m_t, params: FusionParams) -> Tensor:
    """[N, *] stream rows -> [N, d_fused]; concat, SE gate, linear."""
    cat = ad.concat([ad.tensor(v) for v in (high, mid, low, s_t, m_t)], axis=-1)
    if cat.shape[-1] != params.se.dim:
        raise ValueError(
            f"fused stream width {cat.shape[-1]} does not match params ({params.se.dim})"
        )
    gated = se_gate_rows(cat, params.se)
    return ad.add(ad.matmul(gated, params.out_w), params.out_b)


def fuse_audio(high, mid, low, s_t, m_t, params: FusionParams) -> np.ndarray:
    """Per-frame vectors in, fused audio vector out."""
    rows = [np.asarray(v, dtype=np.float64).reshape(1, -1) for v in (high, mid, low, s_t, m_t)]
    with ad.no_grad():
        out = fuse_audio_rows(*rows, params)
    return out.data[0]


def fuse_cross_modal_rows(beta, pose, audio, params: CrossModalParams) -> Tensor:
    """[N, 64], [N, 6], [N, d_fused] -> [N, d_xm] via a 2-layer tanh MLP."""
    cat = ad.concat([ad.tensor(beta), ad.tensor(pose), ad.tensor(audio)], axis=-1)
    if cat.shape[-1] != params.w1.shape[0]:
        raise ValueError(
            f"cross-modal input width {cat.shape[-1]} does not match params "
            f"({params.w1.shape[0]})"
        )
    hidden = ad.tanh(ad.add(ad.matmul(cat, params.w1), params.b1))
    return ad.add(ad.matmul(hidden, params.w2), params.b2)


def fuse_cross_modal(beta_t, pose_t, audio_t, params: CrossModalParams) -> np.ndarray:
    beta = np.asarray(beta_t, dtype=np.float64).reshape(1, -1)
    pose = np.asarray(pose_t, dtype=np.float64).reshape(1, -1)
    audio = np.asarray(audio_t, dtype=np.float64).reshape(1, -1)
    if beta.shape[1] != BETA_DIM or pose.shape[1] != POSE_DIM:
        raise ValueError("beta/pose dimensions must be 64 and 6")
    with ad.no_grad():
        out = fuse_cross_modal_rows(ad.tensor(beta), ad.tensor(pose), ad.tensor(audio), params)
    return out.data[0]
