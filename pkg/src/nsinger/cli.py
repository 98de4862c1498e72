"""``nsinger`` command line: corpus creation, training, synthesis and evaluation.

Exit codes: 0 success, 1 validation or parse error, 2 runtime failure,
3 acceptance-check failure. Every non-zero exit prints one line
``nsinger: CODE: message`` on stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import errors

log = logging.getLogger("nsinger")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3


class AcceptanceFailure(Exception):
    code = "ACCEPTANCE_FAILED"


# --------------------------------------------------------------------------
# commands


def cmd_g2p(args) -> int:
    from .score import decompose_hangul, phoneme_ids_of

    text = "".join(args.text)
    syllables = [ch for ch in text if not ch.isspace()]
    if not syllables:
        raise errors.ValidationError("empty input")
    for ch in syllables:
        triple = decompose_hangul(ch)
        ids = ",".join(str(i) for i in phoneme_ids_of(triple))
        print(f"{ch} → {' '.join(triple.letters)} [{ids}]")
    return EXIT_OK


def cmd_align(args) -> int:
    from .align import align_score, write_aligned
    from .score import load_score

    aligned = align_score(load_score(args.score))
    write_aligned(aligned, args.out)
    log.info("wrote %d frames to %s", aligned.n_frames, args.out)
    return EXIT_OK


def _score_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.glob("*.json") if p.is_file())


def _stem(path: Path) -> str:
    name = path.name
    for suffix in (".score.json", ".json"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def cmd_synth_corpus(args) -> int:
    from .audio import MelConfig
    from .corpus import build_item, random_score, save_item
    from .score import load_score

    mel_cfg = MelConfig(mel_bins=args.mel_bins)
    jobs = []
    if args.score_dir is not None:
        files = _score_files(Path(args.score_dir))
        if not files and not args.random:
            raise errors.ConfigError(f"no *.json scores in {args.score_dir}")
        for p in files:
            try:
                jobs.append((_stem(p), load_score(p)))
            except errors.NSingerError as exc:
                raise type(exc)(f"{p}: {exc}") from None
    rng = np.random.default_rng(args.seed)
    jobs += [(f"random{i:04d}", random_score(rng)) for i in range(args.random)]
    if not jobs:
        raise errors.ConfigError("nothing to synthesize: give a score directory or --random N")
    out = Path(args.out_dir)
    for i, (name, score) in enumerate(jobs):
        save_item(build_item(name, score, args.seed ^ i, mel_cfg), out)
        log.info("synthesized %s (%d frames)", name, score.total_frames)
    print(f"{len(jobs)} clips written to {out}")
    return EXIT_OK


def _train_config(args):
    from .trainer import TrainConfig, load_config

    cfg = load_config(args.config) if args.config else TrainConfig.desk()
    overrides = {}
    if args.seed_given:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None):
        overrides["total_steps"] = args.steps
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
    return cfg


def cmd_train(args) -> int:
    from .corpus import load_corpus
    from .plotting import plot_losses
    from .trainer import fit, load_checkpoint, read_metrics

    out = Path(args.out_dir)
    ckpt = out / "checkpoint.ckpt"
    if args.resume:
        state = load_checkpoint(ckpt)
        config = state.config
        if getattr(args, "steps", None):
            from dataclasses import replace
            config = replace(config, total_steps=args.steps)
            state.config = config
    else:
        state = None
        config = _train_config(args)
    corpus = load_corpus(args.corpus_dir)

    def progress(row):
        if (row["step"] + 1) % 50 == 0:
            log.info("step %d L_G %.4f L_mp %.4f L_dis %.4f", row["step"] + 1, row["L_G"],
                     row["L_mp"], row["L_dis"])

    state, _ = fit(config, corpus, out, state=state, progress=progress)
    plot_losses(read_metrics(out / "metrics.csv"), out / "losses.png")
    print(f"trained to step {state.step}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    from .containers import write_mel
    from .model import synthesize
    from .plotting import plot_mels
    from .score import load_score
    from .trainer import load_generator

    try:
        gen = load_generator(args.checkpoint, expected_mel_bins=args.mel_bins)
    except errors.VersionMismatchError as exc:
        raise errors.ValidationError(f"VERSION_MISMATCH: {exc}") from None
    score = load_score(args.score)
    m_p, arrays = synthesize(score, gen)
    out = Path(args.out_mel)
    write_mel(m_p, out)
    written = [out]
    if args.dump_intermediates:
        base = out.with_suffix("")
        for key in ("D_T", "D_P", "M_D"):
            path = base.with_name(f"{base.name}.{key}.mel")
            write_mel(arrays[key], path)
            written.append(path)
        plot_mels({k: arrays[k] for k in ("D_T", "D_P", "M_D", "M_P")},
                  base.with_name(f"{base.name}.intermediates.png"))
    for p in written:
        print(p)
    return EXIT_OK


def _features_from(path: Path):
    """F0 track from a ``.f0.csv`` file or estimated from a ``.mel`` container."""
    from .audio import MelConfig, estimate_f0, read_f0_csv
    from .containers import read_mel

    if path.name.endswith(".mel"):
        mel = read_mel(path)
        return estimate_f0(mel, MelConfig(mel_bins=mel.shape[0]))
    return read_f0_csv(path)


def _hyp_path(hyp_dir: Path, name: str) -> Path:
    for candidate in (f"{name}.f0.csv", f"{name}.mel"):
        if (hyp_dir / candidate).exists():
            return hyp_dir / candidate
    raise errors.ValidationError(f"no {name}.mel or {name}.f0.csv in {hyp_dir}")


def cmd_evaluate(args) -> int:
    from .audio import read_f0_csv
    from .corpus import corpus_names
    from .metrics import append_summary, evaluate, evaluate_pooled, write_report
    from .plotting import plot_f0_contours
    from .score import load_score

    ref_dir, hyp_dir = Path(args.ref_dir), Path(args.hyp_dir)
    names = corpus_names(ref_dir)
    if not names:
        raise errors.ConfigError(f"no reference bundles (*.score.json) in {ref_dir}")
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    per_clip, pooled = {}, []
    for name in names:
        score = load_score(ref_dir / f"{name}.score.json")
        ref = read_f0_csv(ref_dir / f"{name}.f0.csv")
        hyp = _features_from(_hyp_path(hyp_dir, name))
        per_clip[name] = evaluate(score, ref, hyp)
        pooled.append((score, ref, hyp))
        if not args.no_plots:
            plot_f0_contours(ref, [hyp], report_path.with_name(f"{report_path.stem}.{name}.f0.png"),
                             title=name)
    overall = evaluate_pooled(pooled)
    write_report(report_path, overall, per_clip)
    summary = Path(args.summary) if args.summary else report_path.with_suffix(".csv")
    append_summary(summary, hyp_dir.name or str(hyp_dir), overall)
    for key, value in overall.to_dict().items():
        print(f"{key}: {value}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import full_checks

    reports = full_checks(args.tolerance, args.samples, args.seed, inject_nan=args.inject_nan)
    width = max(len(k) for k in reports)
    print(f"{'check':<{width}}  coords  max_rel_err  status")
    failed = []
    for name, rep in reports.items():
        status = "ok" if rep.passed else "FAIL"
        print(f"{name:<{width}}  {len(rep.coordinates):>6}  {rep.max_rel_error:11.3e}  {status}")
        if not rep.passed:
            failed.append(name)
    if failed:
        raise AcceptanceFailure(f"relative error above {args.tolerance:g} in {', '.join(failed)}")
    return EXIT_OK


def cmd_export_contour(args) -> int:
    from .metrics import export_f0_contours
    from .plotting import plot_f0_contours

    ref = _features_from(Path(args.ref))
    hyp = _features_from(Path(args.hyp))
    hyp2 = _features_from(Path(args.hyp2)) if args.hyp2 else None
    export_f0_contours(ref, hyp, args.out, hyp_b=hyp2)
    hyps = [hyp] + ([hyp2] if hyp2 is not None else [])
    plot_f0_contours(ref, hyps, Path(args.out).with_suffix(".png"),
                     labels=["hyp", "hyp2"][: len(hyps)])
    print(args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing and dispatch


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for every random choice (default 0)")
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="training config file (JSON or key = value lines)")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="nsinger", parents=[common],
                                     description="Korean singing voice acoustic model toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("g2p", parents=[common], help="decompose Hangul lyrics into phoneme IDs")
    p.add_argument("text", nargs="*", help="Hangul text")
    p.set_defaults(func=cmd_g2p)

    p = sub.add_parser("align", parents=[common], help="expand a score into per-frame IDs")
    p.add_argument("score", help="score JSON file")
    p.add_argument("out", help="output file: phoneme row then pitch row")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("synth-corpus", parents=[common],
                       help="render scores with the synthetic singer into corpus bundles")
    p.add_argument("score_dir", nargs="?", help="directory of score JSON files")
    p.add_argument("out_dir", help="corpus output directory")
    p.add_argument("--random", type=int, default=0, metavar="N",
                   help="also render N random scores")
    p.add_argument("--mel-bins", type=int, default=40, help="mel bins (default 40)")
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("train", parents=[common], help="train on a corpus directory")
    p.add_argument("corpus_dir")
    p.add_argument("out_dir", help="receives checkpoint.ckpt, metrics.csv, losses.png")
    p.add_argument("--resume", action="store_true", help="continue from out_dir/checkpoint.ckpt")
    p.add_argument("--steps", type=int, help="override total_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", parents=[common], help="generate a mel for a score")
    p.add_argument("checkpoint")
    p.add_argument("score")
    p.add_argument("out_mel", help="output mel container")
    p.add_argument("--dump-intermediates", action="store_true",
                   help="also write D_T, D_P, M_D containers and a figure")
    p.add_argument("--mel-bins", type=int, help="fail unless the checkpoint has this many bins")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", parents=[common],
                       help="F0, voicing and note metrics of generated clips")
    p.add_argument("ref_dir", help="reference corpus directory")
    p.add_argument("hyp_dir", help="directory of <name>.mel or <name>.f0.csv hypotheses")
    p.add_argument("report", help="output report JSON")
    p.add_argument("--summary", help="CSV summary to append to (default: report with .csv)")
    p.add_argument("--no-plots", action="store_true", help="skip the F0 contour figures")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of every block and the full objectives")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=256, help="coordinates for the full objective")
    p.add_argument("--inject-nan", action="store_true", help="poison one parameter with NaN")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-contour", parents=[common],
                       help="write reference and hypothesis F0 contours to CSV and PNG")
    p.add_argument("ref", help=".f0.csv or .mel")
    p.add_argument("hyp", help=".f0.csv or .mel")
    p.add_argument("out", help="output CSV (figure written next to it)")
    p.add_argument("--hyp2", help="optional second hypothesis")
    p.set_defaults(func=cmd_export_contour)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, AcceptanceFailure):
        return EXIT_ACCEPTANCE
    if isinstance(exc, (errors.NonFiniteError, errors.CheckpointError)) and not isinstance(
            exc, (errors.VersionMismatchError, errors.CorruptFileError)):
        return EXIT_RUNTIME
    if isinstance(exc, (errors.NSingerError, FileNotFoundError, IsADirectoryError)):
        return EXIT_VALIDATION
    return EXIT_RUNTIME


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = hasattr(args, "seed")
    args.seed = getattr(args, "seed", 0)
    args.config = getattr(args, "config", None)
    args.verbose = getattr(args, "verbose", False)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("nsinger: INTERRUPTED: aborted by user", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        if args.verbose:
            log.exception("command failed")
        code = getattr(exc, "code", None) or ("NOT_FOUND" if isinstance(exc, FileNotFoundError)
                                              else "RUNTIME_ERROR")
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"nsinger: {code}: {message}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
