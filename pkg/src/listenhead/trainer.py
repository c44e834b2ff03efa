"""Training, inference, and gradient verification for the listener pipeline.

Composes the encoder, fusion blocks, and decoder into one differentiable
graph, optimizes it with Adam or SGD, and exposes finite-difference
verification of every parameter block. All randomness flows through two
seeded generators (init and shuffling) so runs are bit-reproducible and
resumable from checkpoints.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .audiofeat import AudioClip, embed_text, mfcc_stack
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401  (re-export)
from .coeffspace import BETA_DIM, POSE_DIM, CoefficientSequence
from .fdcheck import fd_gradient, relative_error
from .fusion import (
    CrossModalParams,
    FusionParams,
    fuse_audio_rows,
    fuse_cross_modal_rows,
    init_cross_modal_params,
    init_fusion_params,
)
from .hiercoder import (
    EncoderParams,
    FeaturePyramid,
    cosine_similarity,
    encode_features,
    init_encoder_params,
    project_text,
    sample_negatives,
)
from .seqdecoder import (
    OUT_DIM,
    DecoderParams,
    LossWeights,
    init_decoder_params,
    make_masks,
    regression_loss_tape,
    run_decoder,
)

# Deterministic contrastive anchoring: this many frames per sequence join
# the anchor set each step, the offset rotating with the epoch so every
# frame is eventually covered.
ANCHORS_PER_SEQ = 8

# Feature channels with (near-)zero variance would blow up normalization.
STD_FLOOR = 1e-6

LOG_HEADER = "epoch,train_reg,train_con,val_reg,val_con"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_STAGES = ("joint", "staged")
_OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run, minus the data itself."""

    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    tau: float = 0.07
    k_negatives: int = 16
    w1: float = 1.0
    w2: float = 1.0
    lambda_contrastive: float = 0.1
    seed: int = 0
    stage: str = "joint"
    pretrain_epochs: int = 10
    optimizer: str = "adam"
    hidden_size: int = 32
    d_proj: int = 64
    d_text: int = 32
    d_fused: int = 128
    d_xm: int = 128
    n_mfcc: int = 13
    t_train: int = 64
    enc_widths: tuple = (64, 64, 64)
    use_listener_init: bool = False
    residual_output: bool = False
    squared_norm: bool = False
    text_provider: str = "stub"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.k_negatives < 0:
            raise ValueError("k_negatives must be non-negative")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_contrastive < 0:
            raise ValueError("lambda_contrastive must be non-negative")
        if self.stage not in _STAGES:
            raise ValueError(f"stage must be one of {_STAGES}, got {self.stage!r}")
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be non-negative")
        if self.optimizer not in _OPTIMIZERS:
            raise ValueError(
                f"optimizer must be one of {_OPTIMIZERS}, got {self.optimizer!r}"
            )
        for name in ("hidden_size", "d_proj", "d_text", "d_fused", "d_xm", "n_mfcc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.t_train < 2:
            raise ValueError("t_train must be at least 2 (motion terms need pairs)")
        widths = tuple(int(w) for w in self.enc_widths)
        if len(widths) != 3 or any(w < 1 for w in widths):
            raise ValueError("enc_widths must be three positive integers")
        object.__setattr__(self, "enc_widths", widths)

    @property
    def total_epochs(self) -> int:
        return self.epochs + (self.pretrain_epochs if self.stage == "staged" else 0)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name: str, default, raw: str, lineno: int):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.split(","))
        return raw
    except ValueError as exc:
        raise ValueError(f"config line {lineno}: bad value for {name}: {exc}") from None


def write_train_config(cfg: TrainConfig, path) -> None:
    """Write every field as a 'key = value' line."""
    lines = [
        f"{f.name} = {_format_value(getattr(cfg, f.name))}"
        for f in dataclasses.fields(TrainConfig)
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_train_config(path) -> TrainConfig:
    """Parse 'key = value' lines onto the defaults; unknown keys are errors."""
    defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    if not isinstance(defaults["enc_widths"], tuple):  # default_factory never used
        defaults["enc_widths"] = TrainConfig().enc_widths
    kwargs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            name, sep, value = line.partition("=")
            if not sep:
                raise ValueError(
                    f"config line {lineno}: expected 'key = value', got {line!r}"
                )
            name = name.strip()
            if name not in defaults:
                raise ValueError(f"config line {lineno}: unknown key {name!r}")
            kwargs[name] = _parse_value(name, defaults[name], value.strip(), lineno)
    return TrainConfig(**kwargs)


@dataclass
class Checkpoint:
    """Full training state: everything needed to resume bit-exactly."""

    config: TrainConfig
    params: dict
    buffers: dict
    opt_state: dict
    epoch: int
    rng_state: dict


@dataclass
class ModelParams:
    """The four learned blocks, with a merged flat parameter namespace."""

    encoder: EncoderParams
    fusion: FusionParams
    cross: CrossModalParams
    decoder: DecoderParams

    def named(self) -> dict:
        out = {}
        out.update(self.encoder.named("enc"))
        out.update(self.fusion.named("fus"))
        out.update(self.cross.named("xm"))
        out.update(self.decoder.named("dec"))
        return out


def init_model(cfg: TrainConfig) -> ModelParams:
    """Fresh parameters from cfg.seed; one generator feeds all blocks in order."""
    rng = np.random.default_rng(cfg.seed)
    d_in = 3 * cfg.n_mfcc
    encoder = init_encoder_params(d_in, cfg.enc_widths, cfg.d_proj, cfg.d_text, rng)
    fusion = init_fusion_params(cfg.d_proj, cfg.d_text, d_in, cfg.d_fused, rng)
    cross = init_cross_modal_params(cfg.d_fused, cfg.d_xm, rng)
    decoder = init_decoder_params(cfg.d_xm, cfg.hidden_size, rng)
    return ModelParams(encoder=encoder, fusion=fusion, cross=cross, decoder=decoder)


def export_params(model: ModelParams) -> dict:
    return {name: t.data.copy() for name, t in model.named().items()}


def import_params(model: ModelParams, flat: dict) -> None:
    named = model.named()
    missing = sorted(set(named) - set(flat))
    extra = sorted(set(flat) - set(named))
    if missing or extra:
        raise ValueError(
            f"parameter name mismatch: missing {missing[:3]}, unexpected {extra[:3]}"
        )
    for name, t in named.items():
        arr = np.asarray(flat[name], dtype=np.float64)
        if arr.shape != t.data.shape:
            raise ValueError(
                f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}"
            )
        t.data[...] = arr


@dataclass
class SampleFeatures:
    """One sample, featurized: raw (un-normalized) audio rows plus targets."""

    audio: np.ndarray
    text: np.ndarray
    spk_beta: np.ndarray
    spk_pose: np.ndarray
    lis_beta: np.ndarray
    lis_pose: np.ndarray
    init_frame: np.ndarray
    length: int


def _align_rows(rows: np.ndarray, n_frames: int, what: str) -> np.ndarray:
    """Reconcile feature rows with the coefficient frame count, within one."""
    have = rows.shape[0]
    if have == n_frames:
        return rows
    if have == n_frames + 1:
        return rows[:n_frames]
    if have == n_frames - 1:
        return np.concatenate([rows, rows[-1:]], axis=0)
    raise ValueError(
        f"{what}: {have} feature rows cannot align with {n_frames} frames"
    )


def featurize_inputs(
    audio: AudioClip, coeffs: CoefficientSequence, tokens, cfg: TrainConfig
):
    """Speaker-side inputs as aligned [T, .] arrays."""
    n_frames = len(coeffs)
    if n_frames < 2:
        raise ValueError("need at least two frames")
    rows = mfcc_stack(audio, coeffs.fps, n_mfcc=cfg.n_mfcc).stacked()
    rows = _align_rows(rows, n_frames, "audio features")
    text = embed_text(
        tokens, provider=cfg.text_provider, n_frames=n_frames, d_text=cfg.d_text
    ).vectors
    return rows, text, coeffs.beta.copy(), coeffs.pose.copy()


def featurize_sample(sample, cfg: TrainConfig) -> SampleFeatures:
    rows, text, spk_beta, spk_pose = featurize_inputs(
        sample.speaker_audio, sample.speaker_coeffs, sample.transcript_tokens, cfg
    )
    lis = sample.listener_coeffs
    init_frame = np.concatenate([lis.beta[0], lis.pose[0]])
    return SampleFeatures(
        audio=rows,
        text=text,
        spk_beta=spk_beta,
        spk_pose=spk_pose,
        lis_beta=lis.beta.copy(),
        lis_pose=lis.pose.copy(),
        init_frame=init_frame,
        length=len(lis),
    )


def compute_feature_stats(feats) -> tuple:
    """Per-channel mean/std over all frames of the training set."""
    rows = np.concatenate([f.audio for f in feats], axis=0)
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), STD_FLOOR)
    return mean, std


@dataclass
class Batch:
    """Time-major padded arrays; frames past lengths[b] are zeros."""

    audio: np.ndarray
    text: np.ndarray
    spk_beta: np.ndarray
    spk_pose: np.ndarray
    lis_beta: np.ndarray
    lis_pose: np.ndarray
    init: np.ndarray
    lengths: np.ndarray


def make_batch(feats, indices, t_max: int, feat_mean, feat_std) -> Batch:
    b = len(indices)
    d_in = feats[indices[0]].audio.shape[1]
    d_text = feats[indices[0]].text.shape[1]
    audio = np.zeros((t_max, b, d_in))
    text = np.zeros((t_max, b, d_text))
    spk_beta = np.zeros((t_max, b, BETA_DIM))
    spk_pose = np.zeros((t_max, b, POSE_DIM))
    lis_beta = np.zeros((t_max, b, BETA_DIM))
    lis_pose = np.zeros((t_max, b, POSE_DIM))
    init = np.zeros((b, OUT_DIM))
    lengths = np.zeros(b, dtype=np.intp)
    for j, i in enumerate(indices):
        f = feats[i]
        n = min(f.length, t_max)
        audio[:n, j] = (f.audio[:n] - feat_mean) / feat_std
        text[:n, j] = f.text[:n]
        spk_beta[:n, j] = f.spk_beta[:n]
        spk_pose[:n, j] = f.spk_pose[:n]
        lis_beta[:n, j] = f.lis_beta[:n]
        lis_pose[:n, j] = f.lis_pose[:n]
        init[j] = f.init_frame
        lengths[j] = n
    return Batch(audio, text, spk_beta, spk_pose, lis_beta, lis_pose, init, lengths)


def _predict(model: ModelParams, cfg: TrainConfig, batch: Batch):
    """Run the full network; returns (pred, level row tensors, flat count)."""
    t_max, b = batch.audio.shape[:2]
    n = t_max * b
    audio = ad.tensor(batch.audio)
    low, mid, high = encode_features(audio, model.encoder)
    low_rows = ad.reshape(low, (n, cfg.d_proj))
    mid_rows = ad.reshape(mid, (n, cfg.d_proj))
    high_rows = ad.reshape(high, (n, cfg.d_proj))
    s_rows = ad.tensor(batch.text.reshape(n, cfg.d_text))
    m_rows = ad.reshape(audio, (n, batch.audio.shape[2]))
    fused = fuse_audio_rows(high_rows, mid_rows, low_rows, s_rows, m_rows, model.fusion)
    xm_rows = fuse_cross_modal_rows(
        ad.tensor(batch.spk_beta.reshape(n, BETA_DIM)),
        ad.tensor(batch.spk_pose.reshape(n, POSE_DIM)),
        fused,
        model.cross,
    )
    xm = ad.reshape(xm_rows, (t_max, b, cfg.d_xm))
    init_vec = ad.tensor(batch.init) if cfg.use_listener_init else None
    residual = ad.tensor(batch.init) if cfg.residual_output else None
    pred = run_decoder(
        xm, model.decoder, lengths=batch.lengths, init_vec=init_vec,
        residual_base=residual,
    )
    return pred, (low_rows, mid_rows, high_rows)


def _anchor_positions(t_max: int, b: int, lengths, offset: int) -> np.ndarray:
    """Flat [t*B + b] indices of the anchors for this step, valid frames only."""
    stride = max(1, t_max // ANCHORS_PER_SEQ)
    frames = np.arange(offset % stride, t_max, stride)
    cols = np.arange(b)
    grid = frames[:, None] * b + cols[None, :]
    valid = frames[:, None] < np.asarray(lengths)[None, :]
    idx = grid[valid].astype(np.intp)
    if idx.size == 0:
        # every stride frame fell past the short sequences; frame 0 always exists
        idx = cols.astype(np.intp)
    return idx


def _contrastive_from_rows(level_rows, text_flat, anchor_idx, model, cfg):
    """Mean InfoNCE over anchors; pool = all three levels of the whole batch.

    Row t*B+b of the high block is anchor (t, b)'s positive; the same
    similarity matrix provides every negative, so no sampling is needed
    and the step stays deterministic.
    """
    low_rows, mid_rows, high_rows = level_rows
    n = high_rows.data.shape[0]
    text_sel = ad.tensor(text_flat[anchor_idx])
    anchors = project_text(text_sel, model.encoder)
    cand = ad.concat([high_rows, mid_rows, low_rows], axis=0)
    sims = ad.mul(ad.matmul(anchors, ad.transpose2d(cand)), 1.0 / cfg.tau)
    mask = np.zeros((len(anchor_idx), 3 * n))
    mask[np.arange(len(anchor_idx)), anchor_idx] = 1.0
    pos = ad.sum_axis(ad.mul(sims, ad.tensor(mask)), 1)
    return ad.mean_all(ad.sub(ad.logsumexp(sims, axis=-1), pos))


def _forward(model: ModelParams, cfg: TrainConfig, batch: Batch, anchor_offset: int):
    """Batch losses: (summed regression Tensor, mean contrastive Tensor, pred)."""
    t_max, b = batch.audio.shape[:2]
    pred, level_rows = _predict(model, cfg, batch)
    value_mask, delta_mask = make_masks(batch.lengths, t_max)
    reg_sum = regression_loss_tape(
        pred, batch.lis_beta, batch.lis_pose, value_mask, delta_mask,
        LossWeights(cfg.w1, cfg.w2), squared=cfg.squared_norm,
    )
    anchor_idx = _anchor_positions(t_max, b, batch.lengths, anchor_offset)
    text_flat = batch.text.reshape(t_max * b, cfg.d_text)
    con = _contrastive_from_rows(level_rows, text_flat, anchor_idx, model, cfg)
    return reg_sum, con, pred


def _init_opt_state(cfg: TrainConfig, named: dict) -> dict:
    state = {"step": np.zeros(())}
    if cfg.optimizer == "adam":
        for name, t in named.items():
            state[f"m.{name}"] = np.zeros_like(t.data)
            state[f"v.{name}"] = np.zeros_like(t.data)
    return state


def _apply_gradients(opt_state, cfg: TrainConfig, named: dict, trainable) -> None:
    opt_state["step"][...] += 1.0
    step = float(opt_state["step"])
    lr = cfg.learning_rate
    if cfg.optimizer == "adam":
        bc1 = 1.0 - ADAM_BETA1**step
        bc2 = 1.0 - ADAM_BETA2**step
    for name in sorted(named):
        t = named[name]
        if name not in trainable or t.grad is None:
            continue
        g = t.grad
        if cfg.optimizer == "sgd":
            t.data -= lr * g
            continue
        m = opt_state[f"m.{name}"]
        v = opt_state[f"v.{name}"]
        m[...] = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v[...] = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (g * g)
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def _zero_grads(named: dict) -> None:
    for t in named.values():
        t.grad = None


def _evaluate(model, cfg, feats, feat_mean, feat_std) -> tuple:
    """Fixed-order full pass; per-sequence mean losses."""
    reg_total = 0.0
    con_total = 0.0
    n = len(feats)
    with ad.no_grad():
        for start in range(0, n, cfg.batch_size):
            idx = list(range(start, min(start + cfg.batch_size, n)))
            batch = make_batch(feats, idx, cfg.t_train, feat_mean, feat_std)
            reg_sum, con, _ = _forward(model, cfg, batch, anchor_offset=0)
            reg_total += float(reg_sum.data)
            con_total += float(con.data) * len(idx)
    return reg_total / n, con_total / n


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log_rows: list

    @property
    def log_text(self) -> str:
        body = "".join(row + "\n" for row in self.log_rows)
        return LOG_HEADER + "\n" + body


def train(
    cfg: TrainConfig,
    train_set,
    val_set,
    log_path=None,
    resume_from: Checkpoint | None = None,
) -> TrainResult:
    """Run (or resume) a training job; returns the final state plus the log.

    Each log row is 'epoch,train_reg,train_con,val_reg,val_con' with floats
    rendered by repr, so identical runs produce byte-identical logs. Train
    columns are per-sequence epoch means accumulated batch by batch; val
    columns come from a fixed-order pass after the epoch's updates.
    """
    if not train_set:
        raise ValueError("empty training set")
    if not val_set:
        raise ValueError("empty validation set")
    train_feats = [featurize_sample(s, cfg) for s in train_set]
    val_feats = [featurize_sample(s, cfg) for s in val_set]

    model = init_model(cfg)
    named = model.named()
    if resume_from is not None:
        expect = dataclasses.replace(resume_from.config, epochs=cfg.epochs)
        if expect != cfg:
            raise ValueError("resume config differs beyond the epoch budget")
        import_params(model, resume_from.params)
        feat_mean = resume_from.buffers["feat_mean"].copy()
        feat_std = resume_from.buffers["feat_std"].copy()
        opt_state = {k: v.copy() for k, v in resume_from.opt_state.items()}
        shuffle_rng = np.random.default_rng(cfg.seed + 1)
        shuffle_rng.bit_generator.state = resume_from.rng_state["shuffle"]
        start_epoch = resume_from.epoch
    else:
        feat_mean, feat_std = compute_feature_stats(train_feats)
        opt_state = _init_opt_state(cfg, named)
        shuffle_rng = np.random.default_rng(cfg.seed + 1)
        start_epoch = 0

    enc_names = frozenset(model.encoder.named("enc"))
    all_names = frozenset(named)
    n_train = len(train_feats)
    log_rows = []
    for epoch in range(start_epoch, cfg.total_epochs):
        pretraining = cfg.stage == "staged" and epoch < cfg.pretrain_epochs
        if cfg.stage == "joint":
            trainable = all_names
        elif pretraining:
            trainable = enc_names
        else:
            trainable = all_names - enc_names
        order = shuffle_rng.permutation(n_train)
        reg_acc = 0.0
        con_acc = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = [int(i) for i in order[start : start + cfg.batch_size]]
            batch = make_batch(train_feats, idx, cfg.t_train, feat_mean, feat_std)
            reg_sum, con, _ = _forward(model, cfg, batch, anchor_offset=epoch)
            b = len(idx)
            reg_val = float(reg_sum.data) / b
            con_val = float(con.data)
            if not (math.isfinite(reg_val) and math.isfinite(con_val)):
                raise RuntimeError(
                    f"divergence at epoch {epoch}, batch starting {start}: "
                    f"reg={reg_val} con={con_val}"
                )
            if cfg.stage == "joint":
                total = ad.add(
                    ad.mul(reg_sum, 1.0 / b), ad.mul(con, cfg.lambda_contrastive)
                )
            elif pretraining:
                total = con
            else:
                total = ad.mul(reg_sum, 1.0 / b)
            _zero_grads(named)
            ad.backward(total)
            _apply_gradients(opt_state, cfg, named, trainable)
            reg_acc += reg_val * b
            con_acc += con_val * b
        val_reg, val_con = _evaluate(model, cfg, val_feats, feat_mean, feat_std)
        log_rows.append(
            f"{epoch},{reg_acc / n_train!r},{con_acc / n_train!r},"
            f"{val_reg!r},{val_con!r}"
        )

    ckpt = Checkpoint(
        config=cfg,
        params=export_params(model),
        buffers={"feat_mean": feat_mean.copy(), "feat_std": feat_std.copy()},
        opt_state=opt_state,
        epoch=cfg.total_epochs,
        rng_state={"shuffle": shuffle_rng.bit_generator.state},
    )
    result = TrainResult(checkpoint=ckpt, log_rows=log_rows)
    if log_path is not None:
        # a resumed run appends its rows so the final file matches a
        # straight run byte for byte
        mode = "a" if resume_from is not None else "w"
        with open(log_path, mode, encoding="utf-8") as fh:
            if resume_from is None:
                fh.write(LOG_HEADER + "\n")
            fh.write("".join(row + "\n" for row in log_rows))
    return result


def infer(
    ckpt: Checkpoint,
    speaker_audio: AudioClip,
    speaker_coeffs: CoefficientSequence,
    transcript,
    listener_init=None,
) -> CoefficientSequence:
    """Generate a listener track for one speaker clip."""
    cfg = ckpt.config
    model = init_model(cfg)
    import_params(model, ckpt.params)
    feat_mean = ckpt.buffers["feat_mean"]
    feat_std = ckpt.buffers["feat_std"]
    rows, text, spk_beta, spk_pose = featurize_inputs(
        speaker_audio, speaker_coeffs, transcript, cfg
    )
    n_frames = rows.shape[0]
    if listener_init is not None:
        init = np.concatenate([listener_init.beta, listener_init.pose])
    else:
        init = np.zeros(OUT_DIM)
    batch = Batch(
        audio=((rows - feat_mean) / feat_std)[:, None, :],
        text=text[:, None, :],
        spk_beta=spk_beta[:, None, :],
        spk_pose=spk_pose[:, None, :],
        lis_beta=np.zeros((n_frames, 1, BETA_DIM)),
        lis_pose=np.zeros((n_frames, 1, POSE_DIM)),
        init=init[None, :],
        lengths=np.array([n_frames], dtype=np.intp),
    )
    with ad.no_grad():
        pred, _ = _predict(model, cfg, batch)
    out = pred.data[:, 0, :]
    return CoefficientSequence(
        out[:, :BETA_DIM], out[:, BETA_DIM:], fps=speaker_coeffs.fps
    )


@dataclass
class GradCheckReport:
    """Finite-difference agreement per parameter block."""

    tolerance: float
    block_errors: dict
    failed_blocks: tuple
    passed: bool

    @property
    def max_error(self) -> float:
        return max(self.block_errors.values())

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = max(self.block_errors, key=self.block_errors.get)
        line = (
            f"{status}: {len(self.block_errors)} blocks, "
            f"max_rel_err={self.max_error:.3e} ({worst}), tol={self.tolerance:.1e}"
        )
        if self.failed_blocks:
            line += "\n  failed: " + ", ".join(self.failed_blocks)
        return line


def gradient_check(
    cfg: TrainConfig,
    sample,
    tolerance: float = 1e-4,
    corrupt_block: str | None = None,
) -> GradCheckReport:
    """Compare tape gradients of the total loss against central differences.

    Sized for exhaustive checking: refuses hidden_size > 8 or t_train > 8.
    corrupt_block negates one block's analytic gradient, a fault injection
    the report must catch by naming that block.
    """
    if cfg.hidden_size > 8:
        raise ValueError("gradient_check requires hidden_size <= 8")
    if cfg.t_train > 8:
        raise ValueError("gradient_check requires t_train <= 8")
    model = init_model(cfg)
    named = model.named()
    if corrupt_block is not None and corrupt_block not in named:
        raise ValueError(f"unknown parameter block {corrupt_block!r}")
    feats = featurize_sample(sample, cfg)
    feat_mean, feat_std = compute_feature_stats([feats])
    batch = make_batch([feats], [0], cfg.t_train, feat_mean, feat_std)

    _zero_grads(named)
    reg_sum, con, _ = _forward(model, cfg, batch, anchor_offset=0)
    total = ad.add(reg_sum, ad.mul(con, cfg.lambda_contrastive))
    ad.backward(total)
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in named.items()
    }
    if corrupt_block is not None:
        analytic[corrupt_block] = -analytic[corrupt_block]

    def loss_value(*_arrays) -> float:
        # reads the perturbed tensors through the live model, so the
        # array arguments fd_gradient passes back are ignored
        with ad.no_grad():
            reg, c, _ = _forward(model, cfg, batch, anchor_offset=0)
            return float(reg.data) + cfg.lambda_contrastive * float(c.data)

    block_errors = {}
    for name in sorted(named):
        fd = fd_gradient(loss_value, [named[name].data])[0]
        block_errors[name] = relative_error(analytic[name], fd)
    failed = tuple(n for n, e in sorted(block_errors.items()) if e >= tolerance)
    return GradCheckReport(
        tolerance=tolerance,
        block_errors=block_errors,
        failed_blocks=failed,
        passed=not failed,
    )


def constant_mean_baseline(train_set) -> tuple:
    """Frame-mean listener coefficients over a training set."""
    beta = np.concatenate([s.listener_coeffs.beta for s in train_set], axis=0)
    pose = np.concatenate([s.listener_coeffs.pose for s in train_set], axis=0)
    return beta.mean(axis=0), pose.mean(axis=0)


def baseline_sequence(beta_mean, pose_mean, n_frames: int, fps: float):
    return CoefficientSequence(
        np.tile(beta_mean, (n_frames, 1)), np.tile(pose_mean, (n_frames, 1)), fps=fps
    )


def contrastive_margin(
    ckpt: Checkpoint, samples, k: int = 16, stride: int = 4, rng_seed: int = 0
) -> float:
    """Mean positive cosine minus mean sampled-negative cosine on held-out data.

    Anchors every stride-th frame; negatives come from the cross-sample
    pool via sample_negatives, so this probes the same alignment the
    training objective optimizes but through the retrieval-style path.
    """
    cfg = ckpt.config
    model = init_model(cfg)
    import_params(model, ckpt.params)
    feat_mean = ckpt.buffers["feat_mean"]
    feat_std = ckpt.buffers["feat_std"]
    pyramids = []
    texts = []
    with ad.no_grad():
        for s in samples:
            f = featurize_sample(s, cfg)
            audio = ad.tensor(((f.audio - feat_mean) / feat_std)[:, None, :])
            low, mid, high = encode_features(audio, model.encoder)
            pyramids.append(
                FeaturePyramid(
                    low=low.data[:, 0], mid=mid.data[:, 0], high=high.data[:, 0]
                )
            )
            texts.append(project_text(ad.tensor(f.text), model.encoder).data)
    pos_sims = []
    neg_sims = []
    for i, pyr in enumerate(pyramids):
        for t in range(0, pyr.high.shape[0], stride):
            anchor = texts[i][t]
            pos_sims.append(cosine_similarity(anchor, pyr.high[t]))
            negatives = sample_negatives(
                pyramids, (i, t), k, rng_seed + 7919 * i + t
            )
            neg_sims.extend(cosine_similarity(anchor, v) for v in negatives)
    return float(np.mean(pos_sims) - np.mean(neg_sims))
