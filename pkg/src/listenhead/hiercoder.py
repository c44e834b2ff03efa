"""Hierarchical audio encoder and multi-level contrastive alignment.

Three stages of kernel-3 stride-1 temporal convolution (edge padded) with
per-frame squeeze-excitation gating and tanh, tapped after each stage as
low/mid/high features. Receptive fields grow 3/5/7 frames, so deeper taps
see strictly wider context while staying per-frame local. A linear + L2
projection head per tap (plus one for text) maps everything into a shared
d_proj space where cosine similarity is meaningful.

The contrastive loss pulls a frame's text feature toward the co-located
high-level audio feature against a pool of other high-level features and
any-position low/mid features, softmax-weighted at temperature tau.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .audiofeat import AudioFeatureStack
from .autodiff import Tensor

__all__ = [
    "EncoderParams",
    "FeaturePyramid",
    "init_encoder_params",
    "encode_features",
    "encode_audio",
    "cosine_similarity",
    "sample_negatives",
    "contrastive_loss",
]

KERNEL = 3
N_STAGES = 3
SE_RATIO = 4


@dataclasses.dataclass(frozen=True)
class FeaturePyramid:
    """Per-frame low/mid/high projected features, [T, d_proj] each."""

    low: np.ndarray
    mid: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        if not (self.low.shape == self.mid.shape == self.high.shape):
            raise ValueError("pyramid levels must share a shape")

    def level(self, name: str) -> np.ndarray:
        return {"low": self.low, "mid": self.mid, "high": self.high}[name]


@dataclasses.dataclass
class EncoderParams:
    """Convolution stack, per-stage SE gates, and projection heads."""

    conv_w: list  # stage s: Tensor [KERNEL, d_in, d_out]
    conv_b: list  # Tensor [d_out]
    se_w1: list
    se_b1: list
    se_w2: list
    se_b2: list
    proj_w: list  # low/mid/high: Tensor [width_s, d_proj]
    proj_b: list
    text_w: Tensor
    text_b: Tensor

    def named(self, prefix: str = "enc") -> dict:
        out = {}
        for s in range(N_STAGES):
            out[f"{prefix}.s{s}.conv_w"] = self.conv_w[s]
            out[f"{prefix}.s{s}.conv_b"] = self.conv_b[s]
            out[f"{prefix}.s{s}.se_w1"] = self.se_w1[s]
            out[f"{prefix}.s{s}.se_b1"] = self.se_b1[s]
            out[f"{prefix}.s{s}.se_w2"] = self.se_w2[s]
            out[f"{prefix}.s{s}.se_b2"] = self.se_b2[s]
            out[f"{prefix}.s{s}.proj_w"] = self.proj_w[s]
            out[f"{prefix}.s{s}.proj_b"] = self.proj_b[s]
        out[f"{prefix}.text_w"] = self.text_w
        out[f"{prefix}.text_b"] = self.text_b
        return out


def _scaled(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape))


def init_encoder_params(
    d_in: int,
    widths,
    d_proj: int,
    d_text: int,
    rng: np.random.Generator,
) -> EncoderParams:
    if len(widths) != N_STAGES:
        raise ValueError(f"need {N_STAGES} stage widths")
    conv_w, conv_b = [], []
    se_w1, se_b1, se_w2, se_b2 = [], [], [], []
    proj_w, proj_b = [], []
    prev = d_in
    for width in widths:
        conv_w.append(_scaled(rng, (KERNEL, prev, width), KERNEL * prev))
        conv_b.append(ad.parameter(np.zeros(width)))
        hidden = max(1, width // SE_RATIO)
        se_w1.append(_scaled(rng, (width, hidden), width))
        se_b1.append(ad.parameter(np.zeros(hidden)))
        se_w2.append(_scaled(rng, (hidden, width), hidden))
        se_b2.append(ad.parameter(np.zeros(width)))
        proj_w.append(_scaled(rng, (width, d_proj), width))
        proj_b.append(ad.parameter(np.zeros(d_proj)))
        prev = width
    return EncoderParams(
        conv_w=conv_w,
        conv_b=conv_b,
        se_w1=se_w1,
        se_b1=se_b1,
        se_w2=se_w2,
        se_b2=se_b2,
        proj_w=proj_w,
        proj_b=proj_b,
        text_w=_scaled(rng, (d_text, d_proj), d_text),
        text_b=ad.parameter(np.zeros(d_proj)),
    )


def _rows(x: Tensor) -> Tensor:
    """[T, B, d] -> [T*B, d] for per-frame linear maps."""
    T, B, d = x.shape
    return ad.reshape(x, (T * B, d))


def _unrows(x: Tensor, T: int, B: int) -> Tensor:
    return ad.reshape(x, (T, B, x.shape[-1]))


def _conv3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Kernel-3 stride-1 temporal conv with edge padding, over [T, B, d]."""
    T, B, _ = x.shape
    padded = ad.pad_time_edge(x, 1, 1)
    taps = []
    for k in range(KERNEL):
        tap = ad.narrow(padded, 0, k, T)
        taps.append(ad.matmul(_rows(tap), ad.take0(w, k)))
    out = ad.add(ad.add(taps[0], taps[1]), ad.add(taps[2], b))
    return _unrows(out, T, B)


def _se_frame(x: Tensor, w1, b1, w2, b2) -> Tensor:
    """Per-frame squeeze-excitation: x * sigmoid(relu(x w1 + b1) w2 + b2)."""
    T, B, _ = x.shape
    flat = _rows(x)
    gate = ad.sigmoid(ad.add(ad.matmul(ad.relu(ad.add(ad.matmul(flat, w1), b1)), w2), b2))
    return ad.mul(x, _unrows(gate, T, B))


def encode_features(x: Tensor, params: EncoderParams):
    """Batched encoder: [T, B, d_in] -> three [T, B, d_proj] tensors."""
    levels = []
    h = x
    for s in range(N_STAGES):
        h = _conv3(h, params.conv_w[s], params.conv_b[s])
        h = _se_frame(h, params.se_w1[s], params.se_b1[s], params.se_w2[s], params.se_b2[s])
        h = ad.tanh(h)
        T, B, _ = h.shape
        proj = ad.add(ad.matmul(_rows(h), params.proj_w[s]), params.proj_b[s])
        levels.append(_unrows(ad.normalize_last(proj), T, B))
    return levels[0], levels[1], levels[2]


def project_text(text: Tensor, params: EncoderParams) -> Tensor:
    """[N, d_text] -> [N, d_proj], L2-normalized like the audio heads."""
    return ad.normalize_last(ad.add(ad.matmul(text, params.text_w), params.text_b))


def encode_audio(stack: AudioFeatureStack, params: EncoderParams) -> FeaturePyramid:
    """Encode one feature stack into a per-frame pyramid (inference path)."""
    feats = stack.stacked()
    if feats.shape[0] < 1:
        raise ValueError("empty feature stack")
    if feats.shape[1] != params.conv_w[0].shape[1]:
        raise ValueError(
            f"stack width {feats.shape[1]} does not match encoder input "
            f"width {params.conv_w[0].shape[1]}"
        )
    with ad.no_grad():
        low, mid, high = encode_features(ad.tensor(feats[:, None, :]), params)
    return FeaturePyramid(low.data[:, 0], mid.data[:, 0], high.data[:, 0])


def cosine_similarity(a, b) -> float:
    """Plain cosine similarity; zero-norm inputs are an error, not NaN."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def sample_negatives(batch, anchor_index, k: int, rng_seed: int):
    """Draw k negatives without replacement from the contrastive pool.

    Pool = high-level features at every (sample, t) other than the anchor,
    plus low/mid features at every position including the anchor's own.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    anchor_sample, anchor_t = anchor_index
    pool = []
    for i, pyr in enumerate(batch):
        T = pyr.high.shape[0]
        for t in range(T):
            if not (i == anchor_sample and t == anchor_t):
                pool.append(pyr.high[t])
            pool.append(pyr.low[t])
            pool.append(pyr.mid[t])
    if k > len(pool):
        raise ValueError(f"k={k} exceeds pool of {len(pool)} candidates")
    if k == 0:
        return []
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    chosen = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)] for i in chosen]


def contrastive_loss(text_feature, positive_high, pool, tau: float) -> Tensor:
    """InfoNCE at temperature tau; the positive sits inside the denominator.

    loss = logsumexp_i(sim(f_t, pool_i)/tau) - sim(f_t, positive)/tau
    Accepts Tensors or arrays; returns a scalar Tensor on the tape.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    pool = list(pool)
    if not pool:
        raise ValueError("empty candidate pool")
    positive_t = ad.tensor(positive_high)
    pos_idx = None
    for i, cand in enumerate(pool):
        if cand is positive_high or cand is positive_t:
            pos_idx = i
            break
    if pos_idx is None:
        for i, cand in enumerate(pool):
            if np.array_equal(ad.tensor(cand).data, positive_t.data):
                pos_idx = i
                break
    if pos_idx is None:
        raise ValueError("positive feature must be a member of the pool")

    d = positive_t.data.shape[-1]
    rows = ad.concat([ad.reshape(ad.tensor(v), (1, d)) for v in pool], axis=0)
    text = ad.reshape(ad.tensor(text_feature), (1, d))
    sims = ad.sum_axis(ad.mul(ad.normalize_last(rows), ad.normalize_last(text)), 1)
    scaled = ad.mul(sims, 1.0 / tau)
    pos_term = ad.narrow(scaled, 0, pos_idx, 1)
    return ad.sub(ad.logsumexp(scaled, axis=0), ad.reshape(pos_term, ()))
