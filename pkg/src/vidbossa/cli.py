"""Command-line entry point: ``vidbossa <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline
from .classifier import BSVM_MAGIC, KernelConfig, parse_model
from .codebook import BCBK_MAGIC, parse_codebook
from .config import RunConfig, load_config
from .descriptors import BDSC_MAGIC, DescriptorConfig, parse_descriptors
from .encoding import BFVC_MAGIC, BossaParams, expected_length, parse_features
from .evaluation import CvContext, SWEEP_AXES, run_cv, sweep, write_csv, write_report
from .exceptions import ConfigurationError, FormatError, ProtocolError, VidBossaError
from .synth import CorpusSpec, generate
from .video import read_manifest

log = logging.getLogger("vidbossa")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def describe(path) -> str:
    """One-line summary of a BDSC/BCBK/BFVC/BSVM file."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:4]
    if magic == BDSC_MAGIC:
        ds = parse_descriptors(buf)
        return f"BDSC v1, D={ds.D} bits, N={ds.N} descriptors"
    if magic == BCBK_MAGIC:
        cb = parse_codebook(buf)
        return f"BCBK v1, M={cb.M}, D={cb.D} bits"
    if magic == BFVC_MAGIC:
        v = parse_features(buf)
        if v.layout == "bow":
            return f"BFVC v1, layout=BOW, M={v.M}, length={v.values.size} (expected M={expected_length('bow', v.M, 0)})"
        return (f"BFVC v1, layout=BOSSANOVA, M={v.M}, B={v.B}, length={v.values.size} "
                f"(expected M*(B+1)={expected_length('bossanova', v.M, v.B)})")
    if magic == BSVM_MAGIC:
        m = parse_model(buf)
        dim = m.support_vectors.shape[1] if m.support_vectors.size else 0
        return (f"BSVM v1, metric={m.metric}, gamma={m.gamma:.6g}, C={m.C:g}, "
                f"support vectors={m.alphas.size}, dim={dim}")
    raise FormatError(f"magic: unknown file type {bytes(magic)!r}")


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    return int(os.environ.get("VIDBOSSA_THREADS", "1"))


def _frames_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    try:
        return (int(lo), int(hi)) if sep else (int(lo), int(lo))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN..MAX, got {text!r}") from None


def _bossa(args) -> BossaParams:
    return BossaParams(args.B, args.lmin, args.lmax, args.s, args.knn, args.raw_counts)


def _add_encoder_args(p):
    p.add_argument("--encoder", choices=("bow", "bossanova"), default="bossanova")
    p.add_argument("--B", type=int, default=10)
    p.add_argument("--lmin", type=float, default=0.0)
    p.add_argument("--lmax", type=float, default=3.0)
    p.add_argument("--s", type=float, default=1e-3)
    p.add_argument("--knn", type=int, default=10)
    p.add_argument("--raw-counts", action="store_true", help="skip division by the descriptor count")
    p.add_argument("--normalization", choices=("l2", "none"), default="l2")


def _add_kernel_args(p):
    p.add_argument("--C", type=float, default=10.0)
    p.add_argument("--metric", choices=("l2", "l1"), default="l2")
    p.add_argument("--gamma", default="auto")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-passes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)


def _kernel(args) -> KernelConfig:
    return KernelConfig(args.metric, args.gamma if args.gamma == "auto" else float(args.gamma), args.C)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidbossa", description="Binary-descriptor video classification pipeline.")
    parser.add_argument("--threads", type=int, default=None, help="worker cap (env VIDBOSSA_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-class corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--videos-per-class", type=int, default=20)
    p.add_argument("--frames", type=_frames_range, default=(5, 12))
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--gap", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="dense BRIEF descriptors for a manifest or one image")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, default=256)
    p.add_argument("--patch", type=int, default=16)
    p.add_argument("--step", type=int, default=6)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--smooth-radius", type=int, default=2)

    p = sub.add_parser("codebook", help="k-medians codebook from descriptor files")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--M", type=int, default=256)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--sample", type=int, default=1_000_000)
    p.add_argument("--manifest", help="restrict training to videos outside --fold-holdout")
    p.add_argument("--fold-holdout", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("encode", help="BoW or BossaNova vectors per frame")
    p.add_argument("--codebook", required=True)
    p.add_argument("--descriptors", required=True)
    _add_encoder_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("aggregate", help="per-video BNVD / BoW-VD descriptors")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--agg-z", choices=("max", "min", "mean", "median"), default="median")
    p.add_argument("--agg-t", choices=("max", "min", "mean", "median"), default="median")
    p.add_argument("--out", required=True)

    p = sub.add_parser("baseline-vote", help="frame SVM + majority voting")
    p.add_argument("--features", required=True, help="frame-level feature directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fold-holdout", type=int, default=0)
    p.add_argument("--tie-rule", choices=("positive", "negative"), default="positive")
    _add_kernel_args(p)
    p.add_argument("--out", required=True, help="output CSV of voted labels")

    p = sub.add_parser("baseline-global", help="one mid-level vector from all keyframes")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--manifest", required=True)
    _add_encoder_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the SVM on video features")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--fold-holdout", type=int, default=0)
    p.add_argument("--frame-level", action="store_true")
    _add_kernel_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="score video features with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--manifest")
    p.add_argument("--fold", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="k-fold cross-validation report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="cross-validate over one parameter axis")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", default="", help="comma-separated values")
    p.add_argument("--out", required=True)

    p = sub.add_parser("describe", help="summarise a BDSC/BCBK/BFVC/BSVM file")
    p.add_argument("path")

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("config")
    return parser


def _dispatch(args) -> int:
    threads = _threads(args)
    cmd = args.command
    if cmd == "synth":
        spec = CorpusSpec(args.seed, args.videos_per_class, args.frames, args.size, args.folds, args.gap)
        print(generate(spec, args.out))
    elif cmd == "extract":
        dcfg = DescriptorConfig(args.bits, args.patch, args.step, args.seed, args.smooth_radius)
        n = len(pipeline.extract_stage(args.input, args.out, dcfg, threads))
        print(f"wrote {n} descriptor files to {args.out}")
    elif cmd == "codebook":
        ids = None
        if args.manifest is not None and args.fold_holdout is not None:
            ids = {e.video_id for e in read_manifest(args.manifest) if e.fold != args.fold_holdout}
        cb = pipeline.codebook_stage(args.descriptors, args.out, args.M, args.seed, args.max_iter,
                                     args.sample, ids)
        print(f"BCBK v1, M={cb.M}, D={cb.D} bits -> {args.out}")
    elif cmd == "encode":
        n = len(pipeline.encode_stage(args.codebook, args.descriptors, args.out, args.encoder,
                                      _bossa(args), args.normalization, threads))
        print(f"wrote {n} feature files to {args.out}")
    elif cmd == "aggregate":
        n = len(pipeline.aggregate_stage(args.features, args.manifest, args.out, args.agg_z, args.agg_t))
        print(f"wrote {n} video descriptors to {args.out}")
    elif cmd == "baseline-vote":
        model_path = os.path.splitext(args.out)[0] + ".bsvm"
        pipeline.train_stage(args.features, args.manifest, model_path, args.fold_holdout, _kernel(args),
                             args.tol, args.max_passes, args.seed, frame_level=True)
        rows = pipeline.vote_stage(model_path, args.features, args.manifest, args.out,
                                   args.fold_holdout, args.tie_rule)
        acc = sum(r["predicted"] == r["label"] for r in rows) / max(len(rows), 1)
        print(f"majority-vote accuracy on fold {args.fold_holdout}: {acc:.4f}")
    elif cmd == "baseline-global":
        n = len(pipeline.baseline_global_stage(args.descriptors, args.codebook, args.manifest, args.out,
                                               args.encoder, _bossa(args), args.normalization))
        print(f"wrote {n} globally pooled vectors to {args.out}")
    elif cmd == "train":
        m = pipeline.train_stage(args.features, args.manifest, args.out, args.fold_holdout, _kernel(args),
                                 args.tol, args.max_passes, args.seed, args.frame_level)
        print(f"trained: {m.alphas.size} support vectors, gamma={m.gamma:.6g} -> {args.out}")
    elif cmd == "predict":
        rows = pipeline.predict_stage(args.model, args.features, args.out, args.manifest, args.fold)
        print(f"scored {len(rows)} videos -> {args.out}")
    elif cmd == "evaluate":
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.replace(manifest=args.manifest, threads=threads)
        rep = run_cv(args.manifest, cfg)
        write_report(rep, args.out)
        print(f"mean accuracy {rep.mean_accuracy:.4f} +/- {rep.std_accuracy:.4f}, mean AUC {rep.mean_auc:.4f}")
    elif cmd == "sweep":
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.replace(manifest=args.manifest, threads=threads)
        values = [v for v in args.values.split(",") if v]
        rows = sweep(args.manifest, cfg, args.axis, values, CvContext(args.manifest, threads))
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        write_csv(rows, args.out, None if rows else ["axis", "value", "mean_accuracy", "std_accuracy", "mean_auc"])
        print(f"{len(rows)} rows -> {args.out}")
    elif cmd == "describe":
        print(describe(args.path))
    elif cmd == "run":
        cfg = load_config(args.config)
        if args.threads:
            cfg = cfg.replace(threads=args.threads)
        elif "VIDBOSSA_THREADS" in os.environ:
            cfg = cfg.replace(threads=threads)
        pipeline.run_pipeline(cfg, report=lambda msg: print(msg, file=sys.stderr))
        print(os.path.join(cfg.output, "report", "cv_report.csv"))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigurationError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.cause, (ConfigurationError, ProtocolError)) else EXIT_FAILURE
    except (VidBossaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
