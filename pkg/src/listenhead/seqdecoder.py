"""Six-layer bidirectional GRU decoder and motion-constrained regression.

The decoder consumes per-frame cross-modal embeddings and emits 70 values
per frame (64 expression + 6 pose). Each layer runs a forward and a
backward GRU over the sequence; their hidden states are concatenated as
the next layer's input. Batched sequences of unequal length are handled
by reversing each sequence within its own valid span and masking padded
frames between layers, which keeps padded batches bit-compatible with
decoding each sequence alone.

The regression loss sums unsquared L2 norms of per-frame expression and
pose errors from the second frame on (the first frame is the reference),
plus weighted norms of first-difference (velocity) mismatches.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .coeffspace import BETA_DIM, DEFAULT_FPS, POSE_DIM, CoefficientSequence

__all__ = [
    "N_LAYERS",
    "OUT_DIM",
    "GRUDirectionParams",
    "DecoderParams",
    "LossWeights",
    "init_decoder_params",
    "gru_cell",
    "run_decoder",
    "decode_sequence",
    "make_masks",
    "regression_loss_tape",
    "regression_loss",
]

N_LAYERS = 6
OUT_DIM = BETA_DIM + POSE_DIM


@dataclasses.dataclass
class GRUDirectionParams:
    """One direction of one layer: input map plus recurrent weights."""

    w: Tensor  # [d_in, 3H], gate order update/reset/candidate
    b: Tensor  # [3H]
    u_zr: Tensor  # [2H, H]
    u_h: Tensor  # [H, H]

    @property
    def hidden(self) -> int:
        return self.u_h.shape[0]

    def named(self, prefix: str) -> dict:
        return {
            f"{prefix}.w": self.w,
            f"{prefix}.b": self.b,
            f"{prefix}.u_zr": self.u_zr,
            f"{prefix}.u_h": self.u_h,
        }


@dataclasses.dataclass
class DecoderParams:
    layers: list  # [(fwd, bwd)] * n_layers
    out_w: Tensor  # [2H, OUT_DIM]
    out_b: Tensor  # [OUT_DIM]
    init_w: Tensor  # [OUT_DIM, 2H] reference-frame conditioning
    init_b: Tensor  # [2H]

    @property
    def hidden(self) -> int:
        return self.layers[0][0].hidden

    def named(self, prefix: str = "dec") -> dict:
        out = {}
        for i, (fwd, bwd) in enumerate(self.layers):
            out.update(fwd.named(f"{prefix}.l{i}.f"))
            out.update(bwd.named(f"{prefix}.l{i}.b"))
        out[f"{prefix}.out_w"] = self.out_w
        out[f"{prefix}.out_b"] = self.out_b
        out[f"{prefix}.init_w"] = self.init_w
        out[f"{prefix}.init_b"] = self.init_b
        return out


@dataclasses.dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0
    w2: float = 1.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be non-negative")


def _scaled(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return ad.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape))


def _init_direction(d_in: int, hidden: int, rng: np.random.Generator) -> GRUDirectionParams:
    return GRUDirectionParams(
        w=_scaled(rng, (d_in, 3 * hidden), d_in),
        b=ad.parameter(np.zeros(3 * hidden)),
        u_zr=_scaled(rng, (2 * hidden, hidden), hidden),
        u_h=_scaled(rng, (hidden, hidden), hidden),
    )


def init_decoder_params(
    d_xm: int, hidden: int, rng: np.random.Generator, n_layers: int = N_LAYERS
) -> DecoderParams:
    layers = []
    d_in = d_xm
    for _ in range(n_layers):
        layers.append((_init_direction(d_in, hidden, rng), _init_direction(d_in, hidden, rng)))
        d_in = 2 * hidden
    return DecoderParams(
        layers=layers,
        out_w=_scaled(rng, (2 * hidden, OUT_DIM), 2 * hidden),
        out_b=ad.parameter(np.zeros(OUT_DIM)),
        init_w=_scaled(rng, (OUT_DIM, 2 * hidden), OUT_DIM),
        init_b=ad.parameter(np.zeros(2 * hidden)),
    )


def gru_cell(x_t, h_prev, cell_params: GRUDirectionParams) -> np.ndarray:
    """Single GRU step on plain vectors (runs through the batched kernel)."""
    x = np.asarray(x_t, dtype=np.float64).reshape(1, -1)
    h = np.asarray(h_prev, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != cell_params.w.shape[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match cell ({cell_params.w.shape[0]})"
        )
    if h.shape[1] != cell_params.hidden:
        raise ValueError(
            f"hidden width {h.shape[1]} does not match cell ({cell_params.hidden})"
        )
    with ad.no_grad():
        xw = ad.add(ad.matmul(ad.tensor(x), cell_params.w), cell_params.b)
        out = ad.gru_layer(
            ad.reshape(xw, (1, 1, xw.shape[1])),
            ad.tensor(h),
            cell_params.u_zr,
            cell_params.u_h,
        )
    return out.data[0, 0]


def _direction_pass(x: Tensor, direction: GRUDirectionParams, h0: Tensor) -> Tensor:
    T, B, d = x.shape
    flat = ad.reshape(x, (T * B, d))
    xw = ad.reshape(ad.add(ad.matmul(flat, direction.w), direction.b), (T, B, -1))
    return ad.gru_layer(xw, h0, direction.u_zr, direction.u_h)


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """idx[t, b] reverses each column within its valid span, identity after."""
    t = np.arange(T)[:, None]
    L = lengths[None, :]
    return np.where(t < L, L - 1 - t, t).astype(np.intp)


def run_decoder(
    xm: Tensor,
    params: DecoderParams,
    lengths: np.ndarray | None = None,
    init_vec: Tensor | None = None,
    residual_base: Tensor | None = None,
) -> Tensor:
    """[T, B, d_xm] -> [T, B, 70]; padded frames yield zeros.

    init_vec, when given, is a [B, 70] reference frame projected into the
    layer-1 initial hidden states of both directions. residual_base, when
    given, is a [B, 70] vector added to the head output at every frame.
    """
    T, B, _ = xm.shape
    H = params.hidden
    if lengths is None:
        lengths = np.full(B, T, dtype=np.intp)
    else:
        lengths = np.asarray(lengths, dtype=np.intp)
        if lengths.shape != (B,) or lengths.min() < 1 or lengths.max() > T:
            raise ValueError("lengths must hold one value in [1, T] per sequence")
    mask = ad.tensor((np.arange(T)[:, None] < lengths[None, :]).astype(np.float64)[:, :, None])
    rev = _reverse_index(lengths, T)

    zeros_h0 = ad.tensor(np.zeros((B, H)))
    h0_f = h0_b = zeros_h0
    if init_vec is not None:
        proj = ad.add(ad.matmul(init_vec, params.init_w), params.init_b)
        h0_f = ad.narrow(proj, 1, 0, H)
        h0_b = ad.narrow(proj, 1, H, H)

    h = xm
    for layer_index, (fwd, bwd) in enumerate(params.layers):
        first = layer_index == 0
        out_f = _direction_pass(h, fwd, h0_f if first else zeros_h0)
        rev_in = ad.gather_time(h, rev)
        out_b_rev = _direction_pass(rev_in, bwd, h0_b if first else zeros_h0)
        out_b = ad.gather_time(out_b_rev, rev)
        h = ad.mul(ad.concat([out_f, out_b], axis=-1), mask)

    flat = ad.reshape(h, (T * B, 2 * H))
    out = ad.add(ad.matmul(flat, params.out_w), params.out_b)
    out = ad.reshape(out, (T, B, OUT_DIM))
    if residual_base is not None:
        out = ad.add(out, ad.reshape(residual_base, (1, B, OUT_DIM)))
    return ad.mul(out, mask)


def decode_sequence(
    xm,
    params: DecoderParams,
    init=None,
    fps: float = DEFAULT_FPS,
    residual: bool = False,
) -> CoefficientSequence:
    """Decode one embedding sequence into listener coefficients.

    xm: [T, d_xm] array or list of per-frame vectors; init: optional
    reference CoefficientFrame for initial-state conditioning (and the
    residual base when residual=True).
    """
    xm = np.asarray([np.asarray(v, dtype=np.float64) for v in xm], dtype=np.float64)
    if xm.ndim != 2 or xm.shape[0] < 1:
        raise ValueError("xm must be a nonempty [T, d_xm] sequence")
    init_vec = None
    if init is not None:
        init_vec = np.concatenate([init.beta, init.pose])[None, :]
    residual_base = None
    if residual:
        base = init_vec if init_vec is not None else np.zeros((1, OUT_DIM))
        residual_base = ad.tensor(base)
    with ad.no_grad():
        out = run_decoder(
            ad.tensor(xm[:, None, :]),
            params,
            init_vec=None if init_vec is None else ad.tensor(init_vec),
            residual_base=residual_base,
        )
    coeffs = out.data[:, 0, :]
    return CoefficientSequence(coeffs[:, :BETA_DIM], coeffs[:, BETA_DIM:], fps=fps)


def make_masks(lengths: np.ndarray, T: int):
    """value_mask [T, B] (frames 2..L) and delta_mask [T-1, B] (valid pairs)."""
    lengths = np.asarray(lengths, dtype=np.intp)
    t = np.arange(T)[:, None]
    value = ((t >= 1) & (t < lengths[None, :])).astype(np.float64)
    tp = np.arange(T - 1)[:, None]
    delta = (tp + 1 < lengths[None, :]).astype(np.float64)
    return value, delta


def _part_norms(diff: Tensor, squared: bool) -> Tensor:
    if squared:
        return ad.sum_axis(ad.square(diff), -1)
    return ad.norm_last(diff)


def regression_loss_tape(
    pred: Tensor,
    beta_gt: np.ndarray,
    pose_gt: np.ndarray,
    value_mask: np.ndarray,
    delta_mask: np.ndarray,
    weights: LossWeights,
    squared: bool = False,
) -> Tensor:
    """Batched loss on the tape; sums over frames, then over the batch.

    pred: [T, B, 70]; beta_gt [T, B, 64]; pose_gt [T, B, 6]; masks from
    make_masks. Returns the summed loss (caller normalizes per sequence).
    """
    T, B, _ = pred.shape
    pred_beta = ad.narrow(pred, 2, 0, BETA_DIM)
    pred_pose = ad.narrow(pred, 2, BETA_DIM, POSE_DIM)
    vmask = ad.tensor(value_mask)
    dmask = ad.tensor(delta_mask)

    diff_b = ad.sub(pred_beta, ad.tensor(beta_gt))
    diff_p = ad.sub(pred_pose, ad.tensor(pose_gt))
    value = ad.add(
        ad.sum_all(ad.mul(_part_norms(diff_b, squared), vmask)),
        ad.sum_all(ad.mul(_part_norms(diff_p, squared), vmask)),
    )
    if T < 2:
        return value

    def deltas(x: Tensor) -> Tensor:
        return ad.sub(ad.narrow(x, 0, 1, T - 1), ad.narrow(x, 0, 0, T - 1))

    ddiff_b = ad.sub(deltas(pred_beta), ad.tensor(np.diff(beta_gt, axis=0)))
    ddiff_p = ad.sub(deltas(pred_pose), ad.tensor(np.diff(pose_gt, axis=0)))
    motion_b = ad.sum_all(ad.mul(_part_norms(ddiff_b, squared), dmask))
    motion_p = ad.sum_all(ad.mul(_part_norms(ddiff_p, squared), dmask))
    return ad.add(value, ad.add(ad.mul(motion_b, weights.w1), ad.mul(motion_p, weights.w2)))


def regression_loss(
    pred: CoefficientSequence,
    gt: CoefficientSequence,
    w: LossWeights = LossWeights(),
    squared: bool = False,
) -> float:
    """Loss between two coefficient sequences (single-sequence wrapper)."""
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(gt)}")
    if len(pred) < 2:
        raise ValueError("regression loss needs sequences of length >= 2")
    T = len(pred)
    value_mask, delta_mask = make_masks(np.array([T]), T)
    stacked = np.concatenate([pred.beta, pred.pose], axis=1)[:, None, :]
    with ad.no_grad():
        out = regression_loss_tape(
            ad.tensor(stacked),
            gt.beta[:, None, :],
            gt.pose[:, None, :],
            value_mask,
            delta_mask,
            w,
            squared=squared,
        )
    return float(out.data)
