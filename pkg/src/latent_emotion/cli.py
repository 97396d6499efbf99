"""Command-line entry point: ``latent-emotion <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Output paths go to stdout, progress logging to stderr.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, dump_config, load_config
from .data import DatasetError, load_dataset, read_ps_csv, save_dataset
from .model import ARMS, FullModelConfig

logger = logging.getLogger("latent_emotion")


class UsageError(Exception):
    """Bad arguments that argparse cannot detect on its own."""


def _config(args) -> FullModelConfig:
    cfg = load_config(args.config) if args.config else FullModelConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_synth(args) -> int:
    from .synthetic import generate_synthetic

    try:
        samples = generate_synthetic(args.subjects, args.per_subject, args.classes, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples ({args.subjects} subjects, {args.classes} classes, seed {args.seed}) "
          f"to {args.out}")
    return 0


def cmd_denoise(args) -> int:
    from .wavelet import WaveletSpec, denoise, snr_db

    try:
        spec = WaveletSpec.from_name(args.wavelet, args.levels)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t, channels = read_ps_csv(args.inp)
    cleaned = denoise(channels, spec)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "eda", "ecg", "ppg"])
        for i in range(t.size):
            w.writerow([repr(float(t[i]))] + [repr(float(v)) for v in cleaned[:, i]])
    print(args.out)
    if args.clean:
        _, ref = read_ps_csv(args.clean)
        if ref.shape != channels.shape:
            raise UsageError(f"--clean has shape {ref.shape}, input has {channels.shape}")
        for name, r, noisy, den in zip(("eda", "ecg", "ppg"), ref, channels, cleaned):
            before, after = snr_db(r, noisy), snr_db(r, den)
            print(f"{name}: snr {before:.2f} dB -> {after:.2f} dB (delta {after - before:+.2f} dB)")
    return 0


def cmd_train(args) -> int:
    from .estimators import MultimodalEmotionClassifier

    cfg = _config(args)
    samples = load_dataset(args.data)
    if args.hold_out_subject is not None:
        subjects = {s.subject_id for s in samples}
        if args.hold_out_subject not in subjects:
            raise UsageError(f"unknown subject {args.hold_out_subject!r}; dataset has {sorted(subjects)}")
        samples = [s for s in samples if s.subject_id != args.hold_out_subject]
    logger.info("training %s on %d samples, seed %d", cfg.arm, len(samples), cfg.seed)
    model = MultimodalEmotionClassifier(cfg).fit(samples)
    out = Path(args.out)
    model.params_.save(out / "params")
    (out / "config.cfg").write_text(dump_config(cfg), encoding="utf-8")
    with open(out / "loss_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(model.loss_log_, 1):
            w.writerow([i, f"{loss:.6f}"])
    print(out)
    return 0


def cmd_eval_loso(args) -> int:
    from .evaluation import run_ablations, run_loso

    cfg = _config(args)
    if args.fusion:
        cfg = replace(cfg, frame_weighting=args.fusion)
    if args.attn:
        cfg = replace(cfg, fusion=args.attn)
    samples = load_dataset(args.data)
    if args.arms == "all":
        report = run_ablations(samples, cfg, args.jobs)
    else:
        report = run_loso(samples, cfg.with_arm(args.arms), args.jobs)
    for path in report.write(args.report):
        print(path)
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_suite

    results = run_suite(args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"seed {args.seed}: {len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latent-emotion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--per-subject", type=int, default=6)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("denoise", help="wavelet-denoise a t,eda,ecg,ppg CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--wavelet", default="db4")
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--clean", help="noise-free reference CSV; prints per-channel SNR change")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--hold-out-subject")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-loso", help="leave-one-subject-out evaluation and ablations")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--arms", default="colour+depth+ps", choices=["all", *ARMS])
    p.add_argument("--fusion", choices=["gaussian", "uniform"], help="frame weighting")
    p.add_argument("--attn", choices=["guided", "concat"], help="fusion mechanism")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval_loso)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, OSError, RuntimeError, ValueError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
