"""Command-line entry point: synth, morph, train, score, evaluate, stats.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric or
training error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, metrics, pipeline, report, synth
from .dataio import (DEFAULT_LANDMARKS, DataFormatError, DatasetManifest, Label, LandmarkSet,
                     load_image, load_landmarks, load_manifest, load_pairs, peek_embedding_dim,
                     save_image, write_embeddings, write_landmarks, write_pairs)
from .errors import DgError
from .features import FeatureConfig
from .morphgen import MorphJob, MorphParams, generate_batch, generate_doppelganger_pair
from .svm import SvmConfig, load_model, save_model
from .verify import descriptive_stats, score_pairs, to_display_scale

log = logging.getLogger("dgdetect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags without defaults, so a value given
    # before the subcommand is not clobbered
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--dim", type=int, default=d(None),
                   help="embedding dimension (default: from the file header; synth: 512)")
    p.add_argument("--threads", type=int, default=d(1))
    p.add_argument("--out-dir", type=Path, default=d(Path(".")))
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def _data_args(p):
    p.add_argument("--manifest", type=Path, help="key=value manifest of embeddings/pairs")
    p.add_argument("--embeddings", type=Path, action="append", default=[])
    p.add_argument("--pairs", type=Path, action="append", default=[])


def build_parser() -> argparse.ArgumentParser:
    common = _common(suppress=True)
    parser = _Parser(prog="dgdetect", description=__doc__.splitlines()[0],
                     parents=[_common(suppress=False)])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic embedding dataset")
    p.add_argument("--n-subjects", type=int, default=200)
    p.add_argument("--samples-per-subject", type=int, default=4)
    p.add_argument("--pairings", type=int, default=100, help="lookalike subject pairings")
    p.add_argument("--angle", type=float, default=51.0,
                   help="angle between lookalike centroids in degrees")
    p.add_argument("--noise", type=float, default=0.5, help="relative sample noise")
    p.add_argument("--train-subjects", type=int, default=200)
    p.add_argument("--train-mated", type=int, default=400)
    p.add_argument("--train-morphs", type=int, default=400)
    p.add_argument("--morph-weight", type=float, default=0.5)
    p.add_argument("--nonmated", type=int, default=5000)

    p = sub.add_parser("morph", parents=[common], help="generate doppelgänger morph images")
    p.add_argument("--target", type=Path)
    p.add_argument("--target-lmk", type=Path)
    p.add_argument("--source", type=Path)
    p.add_argument("--source-lmk", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--pair-list", type=Path,
                   help="batch CSV of target_png,source_png,output_png")
    p.add_argument("--landmarks", type=Path, action="append", default=[],
                   help="lmk-v1 file(s) keyed by image file stem (batch mode)")
    p.add_argument("--emit-landmarks", type=Path)
    p.add_argument("--landmark-count", type=int, default=DEFAULT_LANDMARKS)
    p.add_argument("--warp", type=float, default=0.5)
    p.add_argument("--blend", type=float, default=0.5)
    p.add_argument("--feather", type=int, default=None)

    p = sub.add_parser("train", parents=[common], help="train the doppelgänger detector")
    _data_args(p)
    p.add_argument("--model", type=Path, help="output model path (default out-dir/model.svm)")
    p.add_argument("--mode", choices=["signed", "absolute"], default="signed")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--no-symmetrize", action="store_true")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--gamma", default="scale",
                   help="RBF width: a number, 'scale' (1/(D*Var X)) or 'auto' (1/D)")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--calibration-fraction", type=float, default=0.2)

    p = sub.add_parser("score", parents=[common], help="score pairs with a trained model")
    _data_args(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, help="default out-dir/scores.csv")

    p = sub.add_parser("evaluate", parents=[common], help="detection and vulnerability reports")
    p.add_argument("--scores", type=Path, help="detection score CSV from 'score'")
    p.add_argument("--pairs", type=Path, help="pair file labelling the detection scores")
    p.add_argument("--similarity", type=Path, help="label,score CSV from 'stats'")
    p.add_argument("--name", default="dataset")
    p.add_argument("--configuration", default="default")
    p.add_argument("--det-points", type=int, default=None)
    p.add_argument("--svg", action="store_true", help="also render det_curve.svg")

    p = sub.add_parser("stats", parents=[common], help="verification scores and statistics")
    _data_args(p)
    p.add_argument("--name", default="dataset")
    p.add_argument("--display-scale", action="store_true",
                   help="map cosine scores from [-1, 1] to [0, 1] before reporting")
    return parser


# -- helpers -------------------------------------------------------------

def _load_data(args):
    if args.manifest:
        m = load_manifest(args.manifest)
        m.embeddings += args.embeddings
        m.pairs += args.pairs
        if args.dim is not None:
            m.dim = args.dim
    else:
        if not args.embeddings or not args.pairs:
            raise UsageError("give --manifest or both --embeddings and --pairs")
        dim = args.dim or peek_embedding_dim(args.embeddings[0])
        m = DatasetManifest(list(args.embeddings), list(args.pairs), dim=dim)
    if not m.embeddings or not m.pairs:
        raise UsageError("no embedding or pair files given")
    return m.load()


def _positive(text: str, flag: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise UsageError(f"{flag} expects a number, 'auto' or 'scale'") from None
    if not v > 0:
        raise UsageError(f"{flag} must be positive")
    return v


def _out(args, given: Path | None, default: str) -> Path:
    path = given if given is not None else args.out_dir / default
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _config(args, **extra) -> dict:
    """Run configuration for the header digest; paths are left out so that
    reruns in another directory produce identical files."""
    d = {k: v for k, v in vars(args).items()
         if k not in ("verbose", "threads", "out_dir")
         and not isinstance(v, Path) and not (isinstance(v, list) and v
                                             and isinstance(v[0], Path))}
    d.update(extra)
    return d


# -- subcommands ---------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = synth.SynthConfig(
        seed=args.seed, dim=args.dim or 512, n_subjects=args.n_subjects,
        samples_per_subject=args.samples_per_subject, n_pairings=args.pairings,
        angle_deg=args.angle, mated_noise=args.noise, n_train_subjects=args.train_subjects,
        n_train_mated=args.train_mated, n_train_morphs=args.train_morphs,
        morph_weight=args.morph_weight, n_nonmated=args.nonmated)
    data = synth.generate(cfg)
    hdr = report.header_lines("synth", args.seed, cfg.as_dict())
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings(out / "embeddings.emb", data.embeddings, cfg.dim, hdr)
    write_pairs(out / "train_pairs.csv", data.train_pairs, hdr)
    write_pairs(out / "test_pairs.csv", data.test_pairs, hdr)
    for name, pairs in (("train", "train_pairs.csv"), ("test", "test_pairs.csv")):
        (out / f"{name}.manifest").write_text(
            "\n".join(hdr + [f"dim={cfg.dim}", "embeddings=embeddings.emb",
                             f"pairs={pairs}"]) + "\n", encoding="utf-8")
    print(f"wrote {len(data.embeddings)} embeddings, {len(data.train_pairs)} training pairs, "
          f"{len(data.test_pairs)} test pairs to {out}")
    return EXIT_OK


def _morph_params(args) -> MorphParams:
    try:
        return MorphParams(args.warp, args.blend, args.feather)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_morph(args) -> int:
    params = _morph_params(args)
    hdr = report.header_lines("morph", args.seed, _config(args))
    if args.pair_list is None:
        missing = [f for f in ("target", "target_lmk", "source", "source_lmk", "out")
                   if getattr(args, f) is None]
        if missing:
            raise UsageError("single mode needs --" + ", --".join(m.replace("_", "-")
                                                                   for m in missing))
        t_lmk = load_landmarks(args.target_lmk, args.landmark_count)
        s_lmk = load_landmarks(args.source_lmk, args.landmark_count)
        if len(t_lmk) != 1 or len(s_lmk) != 1:
            raise DataFormatError("single mode expects one record per landmark file")
        res = generate_doppelganger_pair(load_image(args.target), t_lmk[0],
                                         load_image(args.source), s_lmk[0], params)
        _out(args, args.out, "")
        save_image(args.out, res.image)
        if args.emit_landmarks:
            write_landmarks(args.emit_landmarks,
                            [LandmarkSet(args.out.stem, res.landmarks.points)],
                            args.landmark_count, hdr)
        print(f"wrote {args.out}")
        return EXIT_OK

    index = {}
    for f in args.landmarks:
        index.update(load_landmarks(f, args.landmark_count).by_id())
    base = args.pair_list.parent
    rows = []
    with open(args.pair_list, newline="", encoding="utf-8") as fh:
        for n, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 3:
                raise DataFormatError("expected target,source,output", args.pair_list, n)
            rows.append((n, *(Path(c.strip()) if Path(c.strip()).is_absolute()
                              else base / c.strip() for c in row)))
    jobs, failures = [], 0
    for n, tgt, src, dst in rows:
        try:
            jobs.append((n, dst, MorphJob(load_image(tgt), index[tgt.stem], load_image(src),
                                          index[src.stem], tgt.stem, src.stem)))
        except (KeyError, OSError, DgError) as exc:
            print(f"row {n}: {exc!r}", file=sys.stderr)
            failures += 1
    results = generate_batch([j for _, _, j in jobs], params, args.threads)
    emitted = []
    for (n, dst, _), res in zip(jobs, results):
        if isinstance(res, Exception):
            print(f"row {n}: {res}", file=sys.stderr)
            failures += 1
            continue
        dst.parent.mkdir(parents=True, exist_ok=True)
        save_image(dst, res.image)
        emitted.append(LandmarkSet(dst.stem, res.landmarks.points))
    if args.emit_landmarks and emitted:
        write_landmarks(args.emit_landmarks, emitted, args.landmark_count, hdr)
    print(f"morphed {len(emitted)} of {len(rows)} rows")
    return EXIT_DATA if failures else EXIT_OK


def cmd_train(args) -> int:
    embeddings, pairs = _load_data(args)
    fcfg = FeatureConfig(args.mode, not args.no_normalize, not args.no_symmetrize)
    gamma = args.gamma if args.gamma in ("auto", "scale") else _positive(args.gamma, "--gamma")
    scfg = SvmConfig(C=args.C, gamma=gamma, tolerance=args.tol, seed=args.seed)
    model, summary = pipeline.train_detector(pairs, embeddings, fcfg, scfg,
                                             args.calibration_fraction)
    path = _out(args, args.model, "model.svm")
    save_model(model, path, report.header_lines(
        "train", args.seed, _config(args, feature=asdict(fcfg), svm=asdict(scfg))))
    print(f"pairs: {summary.n_mated_pairs} mated, {summary.n_doppelganger_pairs} doppelganger; "
          f"features: {summary.n_features}; support vectors: {summary.n_support_vectors}; "
          f"calibration A={summary.A:.6g} B={summary.B:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_score(args) -> int:
    model = load_model(args.model)
    embeddings, pairs = _load_data(args)
    scores = pipeline.score_detector(model, pairs, embeddings)
    path = _out(args, args.out, "scores.csv")
    report.write_csv(path, report.header_lines("score", args.seed, _config(args)),
                     report.SCORE_HEADER,
                     [[p.reference_id, p.probe_id, float(s)] for p, s in zip(pairs, scores)])
    print(f"wrote {len(pairs)} scores to {path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.scores is None and args.similarity is None:
        raise UsageError("give --scores (with --pairs) and/or --similarity")
    hdr = report.header_lines("evaluate", args.seed, _config(args))
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    det = vuln = None
    if args.scores is not None:
        if args.pairs is None:
            raise UsageError("--scores needs --pairs for labels")
        scored = report.read_detection_scores(args.scores)
        pairs = load_pairs(args.pairs)
        if len(scored) != len(pairs) or any(
                (r, p) != (q.reference_id, q.probe_id) for (r, p, _), q in zip(scored, pairs)):
            raise DataFormatError("score file rows do not match the pair file", args.scores)
        attack, bona = pipeline.split_detection_scores(pairs, [s for *_, s in scored])
        if attack.size == 0 or bona.size == 0:
            raise DataFormatError("detection evaluation needs doppelganger and mated pairs")
        det = metrics.detection_summary(attack, bona)
        report.write_csv(out / "detection.csv", hdr, report.DETECTION_HEADER,
                         [report.detection_rows(args.name, args.configuration, det)])
        curve = metrics.det_curve(attack, bona, args.det_points)
        report.write_csv(out / "det_curve.csv", hdr, report.DET_HEADER, report.det_rows(curve))
        if args.svg:
            report.render_det_svg(out / "det_curve.svg", {args.configuration: curve})
        print(f"D-EER {det.d_eer:.2%}  BPCER10 {det.bpcer10:.2%}  BPCER20 {det.bpcer20:.2%}")
    if args.similarity is not None:
        sets = report.read_score_set(args.similarity)
        mated, nonmated, attack = (sets[Label.MATED], sets[Label.NONMATED],
                                   sets[Label.DOPPELGANGER])
        if not mated or not nonmated or not attack:
            raise DataFormatError("vulnerability evaluation needs mated, nonmated and "
                                  "doppelganger scores", args.similarity)
        vuln = metrics.vulnerability_table(mated, nonmated, attack)
        report.write_csv(out / "vulnerability.csv", hdr, report.VULN_HEADER,
                         [[args.name, v.target_fmr, v.threshold, v.achieved_fmr, v.fnmr,
                           v.iapmr] for v in vuln])
        stats = {lab.value: descriptive_stats(sets[lab]) for lab in
                 (Label.DOPPELGANGER, Label.MATED, Label.NONMATED)}
        report.write_csv(out / "stats.csv", hdr, report.STATS_HEADER,
                         report.stats_rows(args.name, stats))
        for v in vuln:
            print(f"FMR {v.target_fmr:.2%}: FNMR {v.fnmr:.2%} / IAPMR {v.iapmr:.2%} "
                  f"(achieved FMR {v.achieved_fmr:.4%})")
    report.write_csv(out / "report.csv", hdr, report.LONG_HEADER,
                     report.long_rows(args.name, args.configuration, det, vuln))
    print(f"wrote reports to {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    embeddings, pairs = _load_data(args)
    ss = score_pairs(pairs, embeddings, meta=args.name)
    conv = "cosine mapped to [0,1]" if args.display_scale else "raw cosine"
    cfg = _config(args)
    hdr = report.header_lines("stats", args.seed, cfg) + [
        f"# scores: {conv}; stats: sample mean, sample std (n-1), adjusted Fisher-Pearson "
        "skewness, bias-corrected excess kurtosis"]
    tf = (lambda v: [float(x) for x in to_display_scale(v)]) if args.display_scale else list
    sets = {Label.MATED: tf(ss.mated), Label.NONMATED: tf(ss.nonmated),
            Label.DOPPELGANGER: tf(ss.attack)}
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "similarity_scores.csv", hdr, report.SCORESET_HEADER,
                     [[lab.value, s] for lab, vals in sets.items() for s in vals])
    stats = {lab.value: descriptive_stats(sets[lab]) for lab in
             (Label.DOPPELGANGER, Label.MATED, Label.NONMATED)}
    report.write_csv(out / "stats.csv", hdr, report.STATS_HEADER,
                     report.stats_rows(args.name, stats))
    for cat, s in stats.items():
        fields = [("mean", s.mean), ("std", s.std), ("skew", s.skewness),
                  ("exkurt", s.excess_kurtosis)]
        print(f"{cat:>13} n={s.n:<8} " + " ".join(
            f"{k}={'undefined' if v is None else f'{v:.4f}'}" for k, v in fields))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "morph": cmd_morph, "train": cmd_train, "score": cmd_score,
            "evaluate": cmd_evaluate, "stats": cmd_stats}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                return COMMANDS[args.command](args)
            finally:
                for w in caught:
                    print(f"dgdetect {args.command}: warning: {w.message}", file=sys.stderr)
    except UsageError as exc:
        print(f"dgdetect {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DgError as exc:
        print(f"dgdetect {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"dgdetect {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"dgdetect {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
