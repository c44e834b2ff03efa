"""Command-line entry point: synth, train, infer, eval, gradcheck, plot.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 check failure.
Outputs carry no timestamps, so reruns with identical inputs and seeds
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import metrics, synthdata, trainer
from .audiofeat import load_wav
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .coeffspace import (
    CoefficientFormatError,
    load_coefficient_sequence,
    save_coefficient_sequence,
)

IMAGE_SUFFIXES = (".png", ".pgm")

# exhaustive finite-difference checking is only tractable on a small model
GRADCHECK_CFG = dict(
    epochs=1, hidden_size=4, d_proj=6, d_text=4, d_fused=10, d_xm=10,
    n_mfcc=8, t_train=8, enc_widths=(6, 6, 6),
)


def _split_fractions(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("split needs three comma-separated fractions")
    return tuple(parts)


def _int_list(text: str):
    return tuple(int(p) for p in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="listenhead",
        description="Listener head motion generation: data, training, "
        "inference, evaluation, and diagnostics.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic dyadic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--duration-s", type=float, default=2.0)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--coupling-nod", type=float, default=0.9)
    p.add_argument("--coupling-expr", type=float, default=0.9)
    p.add_argument("--lag-frames", type=int, default=3)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=_split_fractions, default=(0.8, 0.1, 0.1),
                   help="train,val,test fractions")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a synthesized dataset")
    p.add_argument("--data", required=True, help="dataset directory with manifest")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--config", help="training config file (key = value lines)")
    p.add_argument("--log", help="epoch loss CSV to write")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="generate a listener track for one clip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--audio", required=True, help="speaker WAV")
    p.add_argument("--coeffs", required=True, help="speaker coefficient CSV")
    p.add_argument("--transcript", help="token file (whitespace separated)")
    p.add_argument("--init", help="coefficient CSV seeding the listener pose")
    p.add_argument("--out", required=True, help="listener coefficient CSV to write")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction directory")
    p.add_argument("--gt", required=True, help="ground-truth directory")
    p.add_argument("--out", help="write the aggregate report here too")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help="negate this block's gradient (fault fixture)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="plot predicted vs reference trajectories")
    p.add_argument("--pred", required=True, help="predicted coefficient CSV")
    p.add_argument("--gt", required=True, help="reference coefficient CSV")
    p.add_argument("--out", required=True, help="PNG file to write")
    p.add_argument("--beta-dims", type=_int_list, default=(0, 1, 2, 3),
                   help="expression dimensions to draw")
    p.set_defaults(func=cmd_plot)
    return parser


def cmd_synth(args) -> int:
    cfg = synthdata.DyadConfig(
        seed=args.seed, duration_s=args.duration_s, fps=args.fps,
        sample_rate=args.sample_rate, coupling_nod=args.coupling_nod,
        coupling_expr=args.coupling_expr, lag_frames=args.lag_frames,
        noise_sigma=args.noise_sigma,
    )
    manifest = synthdata.write_dataset(cfg, args.n, args.split, args.out)
    sizes = {name: len(v) for name, v in manifest["splits"].items()}
    print(f"wrote {args.n} samples to {args.out} "
          f"(train {sizes['train']}, val {sizes['val']}, test {sizes['test']})")
    return 0


def _load_split(data_dir, name):
    samples = synthdata.read_split(data_dir, name)
    if not samples:
        raise ValueError(f"dataset at {data_dir} has an empty {name!r} split")
    return samples


def cmd_train(args) -> int:
    cfg = trainer.read_train_config(args.config) if args.config else trainer.TrainConfig()
    train_set = _load_split(args.data, "train")
    val_set = _load_split(args.data, "val")
    resume = load_checkpoint(args.resume) if args.resume else None
    result = trainer.train(cfg, train_set, val_set, log_path=args.log,
                           resume_from=resume)
    save_checkpoint(result.checkpoint, args.out)
    if result.log_rows:
        print(trainer.LOG_HEADER)
        print(result.log_rows[-1])
    print(f"saved checkpoint to {args.out} (epoch {result.checkpoint.epoch})")
    return 0


def _read_tokens(path) -> tuple:
    if path is None:
        return ()
    return tuple(Path(path).read_text(encoding="utf-8").split())


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    audio = load_wav(args.audio)
    coeffs = load_coefficient_sequence(args.coeffs)
    init = None
    if args.init:
        init = load_coefficient_sequence(args.init)[0]
    pred = trainer.infer(ckpt, audio, coeffs, _read_tokens(args.transcript),
                         listener_init=init)
    save_coefficient_sequence(pred, args.out)
    print(f"wrote {len(pred)} frames to {args.out}")
    return 0


def _pair_kind(path: Path) -> str:
    if path.suffix.lower() in IMAGE_SUFFIXES:
        return "image"
    if path.suffix.lower() == ".csv":
        try:
            load_coefficient_sequence(path)
            return "coeffs"
        except CoefficientFormatError:
            return "embeddings"
    return "other"


def _eval_pair(kind: str, pred: Path, gt: Path) -> dict:
    if kind == "image":
        a = metrics.load_gray_image(pred)
        b = metrics.load_gray_image(gt)
        out = {"PSNR": metrics.psnr(a, b), "SSIM": metrics.ssim(a, b)}
        if min(a.pixels.shape) >= metrics.CPBD_MIN_SIZE:
            out["CPBD"] = metrics.cpbd(a)
        return out
    if kind == "coeffs":
        a = load_coefficient_sequence(pred)
        b = load_coefficient_sequence(gt)
        out = {
            "ExpL1": metrics.coeff_l1(a, b, "expression"),
            "PoseL1": metrics.coeff_l1(a, b, "pose"),
        }
        if len(a) >= 2 and len(b) >= 2:
            out["ExpFD"] = metrics.coeff_frechet(a, b, "expression")
            out["PoseFD"] = metrics.coeff_frechet(a, b, "pose")
        return out
    a = metrics.load_embeddings(pred)
    b = metrics.load_embeddings(gt)
    out = {}
    if a.vectors.shape[0] >= 2 and b.vectors.shape[0] >= 2:
        out["FID"] = metrics.embedding_frechet(a, b)
    if a.vectors.shape == b.vectors.shape:
        out["CSIM"] = metrics.csim(a, b)
    return out


def cmd_eval(args) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise ValueError(f"not a directory: {d}")
    pred_names = {p.name for p in pred_dir.iterdir() if p.is_file()}
    gt_names = {p.name for p in gt_dir.iterdir() if p.is_file()}
    for name in sorted(pred_names ^ gt_names):
        print(f"skipping unpaired file: {name}", file=sys.stderr)
    common = sorted(pred_names & gt_names)
    reports = []
    for name in common:
        kind = _pair_kind(gt_dir / name)
        if kind == "other":
            print(f"skipping unsupported file type: {name}", file=sys.stderr)
            continue
        values = _eval_pair(kind, pred_dir / name, gt_dir / name)
        reports.append(values)
        print(f"== {name}")
        print(metrics.format_report(values))
    if not reports:
        raise ValueError("no evaluable file pairs found")
    averaged = metrics.aggregate_reports(reports)
    # absent metric families still get a line, marked n/a
    aggregate = {name: averaged.get(name) for name in metrics.METRIC_ORDER}
    text = metrics.format_report(aggregate)
    print(f"== aggregate ({len(reports)} pairs)")
    print(text)
    if args.out:
        metrics.write_report(args.out, aggregate)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = trainer.TrainConfig(seed=args.seed, **GRADCHECK_CFG)
    sample = synthdata.generate_dyad(
        synthdata.DyadConfig(seed=0, duration_s=0.4, fps=30.0, sample_rate=8000)
    )
    report = trainer.gradient_check(
        cfg, sample, tolerance=args.tolerance, corrupt_block=args.corrupt
    )
    print(report.summary())
    return 0 if report.passed else 3


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pred = load_coefficient_sequence(args.pred)
    gt = load_coefficient_sequence(args.gt)
    for d in args.beta_dims:
        if not 0 <= d < pred.beta.shape[1]:
            raise ValueError(f"beta dimension {d} out of range")
    t_pred = np.arange(len(pred)) / pred.fps
    t_gt = np.arange(len(gt)) / gt.fps
    fig, (ax_pose, ax_beta) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    for d in range(pred.pose.shape[1]):
        (line,) = ax_pose.plot(t_pred, pred.pose[:, d], label=f"pose[{d}] pred")
        ax_pose.plot(t_gt, gt.pose[:, d], linestyle="--", color=line.get_color(),
                     alpha=0.6, label=f"pose[{d}] ref")
    ax_pose.set_ylabel("pose")
    ax_pose.legend(fontsize=6, ncol=4)
    for d in args.beta_dims:
        (line,) = ax_beta.plot(t_pred, pred.beta[:, d], label=f"beta[{d}] pred")
        ax_beta.plot(t_gt, gt.beta[:, d], linestyle="--", color=line.get_color(),
                     alpha=0.6, label=f"beta[{d}] ref")
    ax_beta.set_ylabel("expression")
    ax_beta.set_xlabel("time [s]")
    ax_beta.legend(fontsize=6, ncol=4)
    fig.tight_layout()
    # strip the library version stamp so identical inputs give identical bytes
    fig.savefig(args.out, format="png", metadata={"Software": None})
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
