"""Command-line interface: ``vbxdiar <subcommand> ...``.

Exit codes: 0 success, 1 input error, 2 numerical failure, 3 VBx did not
converge and ``--strict`` was given.
"""

import argparse
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io, oracle, plda, scoring, synth
from .ahc import AHCConfig
from .exceptions import InputError, NumericalError, VBxError
from .pipeline import diarize_recording
from .vbx import VBxConfig

log = logging.getLogger("vbxdiar")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 1, 2, 3

# tunables resolved as: command-line flag > --config file > these defaults
DEFAULTS = {
    "fa": 0.3,
    "fb": 17.0,
    "loop_p": 0.99,
    "ahc_threshold": 0.6,
    "r": 128,
    "max_iters": 40,
    "elbo_tol": 1e-6,
    "prune_pi": 1e-4,
}
_TYPES = {"r": int, "max_iters": int}


def resolve_settings(args, keys):
    """Merge flags, the optional config file and built-in defaults."""
    from_file = io.read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(from_file) - set(DEFAULTS)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key in keys:
        cast = _TYPES.get(key, float)
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = cast(flag)
        elif key in from_file:
            try:
                out[key] = cast(from_file[key])
            except ValueError:
                raise InputError(f"config value for {key!r} is not a valid number") from None
        else:
            out[key] = DEFAULTS[key]
    return out


def _add_tunable(p, key, help_text):
    flag = "--" + key.replace("_", "-")
    p.add_argument(flag, dest=key, type=_TYPES.get(key, float), default=None,
                   help=f"{help_text} (default {DEFAULTS[key]})")


def _write_text(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def cmd_estimate_plda(args):
    vectors, ids = io.read_labeled_embeddings(args.train)
    model = plda.estimate_plda(vectors, ids)
    io.write_plda(args.out, model)
    log.info("estimated PLDA: D=%d from %d vectors, %d speakers",
             model.dim, len(ids), len(set(ids.tolist())))
    return EXIT_OK


def cmd_derive_space(args):
    settings = resolve_settings(args, ["r"])
    model = io.read_plda(args.plda).validate()
    space = plda.derive_space(model, settings["r"])
    if space.n_clamped:
        log.warning("%d eigenvalue(s) clamped to %g", space.n_clamped, plda.EIG_FLOOR)
    io.write_space(args.out, space)
    return EXIT_OK


def cmd_subsegment(args):
    segs = io.subsegment(io.read_vad(args.vad), args.window, args.shift, args.min_len)
    _write_text(args.out, "".join(f"{a:.3f} {b:.3f}\n" for a, b in segs))
    return EXIT_OK


def cmd_synth(args):
    if args.phi:
        phi = np.array([float(v) for v in args.phi.split(",")])
    else:
        phi = np.linspace(args.phi_high, args.phi_low, args.dim)
    # the written space is the identity, so dimensions must already be in phi order
    phi = np.sort(phi)[::-1]
    cfg = synth.SynthConfig(
        speakers=args.speakers, duration_steps=args.steps, phi=phi,
        loop_p=args.loop_p, step_seconds=args.step_seconds, seed=args.seed,
    )
    x, z, _ = synth.sample_conversation(cfg)
    onsets, offsets = synth.step_times(cfg.duration_steps, cfg.step_seconds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = args.recording_id
    io.write_embeddings(out / f"{rec}.emb", io.EmbeddingSequence(rec, onsets, offsets, x),
                        binary=args.binary)
    io.write_rttm(out / f"{rec}.ref.rttm", synth.labels_to_timeline(z, cfg.step_seconds, rec))
    io.write_space(out / "space.txt", plda.DiarSpace.identity(phi))
    return EXIT_OK


def cmd_diarize(args):
    settings = resolve_settings(
        args, ["fa", "fb", "loop_p", "ahc_threshold", "max_iters", "elbo_tol", "prune_pi"]
    )
    space = io.read_space(args.space)
    ahc_cfg = AHCConfig(settings["ahc_threshold"])
    vbx_cfg = VBxConfig(settings["fa"], settings["fb"], settings["loop_p"],
                        settings["max_iters"], settings["elbo_tol"], settings["prune_pi"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def work(path):
        emb = io.read_embeddings(path)
        if not args.preprocessed and emb.dim != space.source_dim:
            raise InputError(f"{path}: dimension {emb.dim} does not match space ({space.source_dim})")
        if args.preprocessed and emb.dim != space.dim:
            raise InputError(f"{path}: dimension {emb.dim} does not match space ({space.dim})")
        result = diarize_recording(emb, space, ahc_cfg, vbx_cfg, preprocessed=args.preprocessed)
        io.write_rttm(out / f"{emb.recording_id}.rttm", result.timeline)
        return emb.recording_id, result

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(work, args.embeddings))

    not_converged = []
    for rec, res in results:
        if res.state is None:
            continue
        log.info("%s: %d speakers, %d iterations%s", rec, res.state.n_active, res.state.n_iter,
                 "" if res.state.converged else " (not converged)")
        if not res.state.converged:
            not_converged.append(rec)
    if not_converged:
        log.warning("VBx did not converge for: %s", ", ".join(not_converged))
        if args.strict:
            return EXIT_NOT_CONVERGED
    return EXIT_OK


def _load_rttms(paths):
    merged = {}
    for p in paths:
        for rec, tl in io.read_rttm(p).items():
            if rec in merged:
                tl = scoring.Timeline(rec, merged[rec].segments + tl.segments)
            merged[rec] = tl
    return merged


def cmd_score(args):
    refs = _load_rttms([args.ref])
    hyps = _load_rttms(args.hyp)
    setup = scoring.ScoreSetup.named(args.setup)
    if args.collar is not None:
        setup = scoring.ScoreSetup(args.collar, setup.score_overlap)
    scores, overall = scoring.score_all(refs, hyps, setup)
    _write_text(args.out, scoring.format_report(scores, overall))
    return EXIT_OK


def cmd_build_ref(args):
    timelines = [
        scoring.build_reference(words, rec, include_vocal_sounds=args.include_vocal_sounds)
        for rec, words in sorted(io.read_words(args.words).items())
    ]
    _write_text(args.out, io.format_rttm(timelines))
    return EXIT_OK


def cmd_oracle(args):
    worst = oracle.compare_engine(args.instances, args.seed)
    _write_text(args.out, oracle.format_comparison(worst, args.instances))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="vbxdiar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-plda", help="estimate a PLDA model from labelled embeddings")
    p.add_argument("--train", required=True, help="lines of '<speaker> <v1> ... <vD>'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_plda)

    p = sub.add_parser("derive-space", help="derive the projection into the VBx space")
    p.add_argument("--plda", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_tunable(p, "r", "output dimension R")
    p.set_defaults(func=cmd_derive_space)

    p = sub.add_parser("subsegment", help="split VAD speech intervals into embedding windows")
    p.add_argument("--vad", required=True)
    p.add_argument("--window", type=float, default=1.5)
    p.add_argument("--shift", type=float, default=0.25)
    p.add_argument("--min-len", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_subsegment)

    p = sub.add_parser("synth", help="sample a synthetic conversation")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--recording-id", default="synth")
    p.add_argument("--speakers", type=int, default=2)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--phi", help="comma-separated between-speaker variances (overrides --dim)")
    p.add_argument("--phi-low", type=float, default=100.0)
    p.add_argument("--phi-high", type=float, default=200.0)
    p.add_argument("--loop-p", type=float, default=0.99)
    p.add_argument("--step-seconds", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--binary", action="store_true", help="write the binary embedding format")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("diarize", help="cluster embedding files and write one RTTM per recording")
    p.add_argument("embeddings", nargs="+")
    p.add_argument("--space", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--preprocessed", action="store_true",
                   help="embeddings are already projected and normalized")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--strict", action="store_true", help="exit 3 if VBx does not converge")
    p.add_argument("--config", help="key=value file with default tunables")
    _add_tunable(p, "fa", "acoustic scaling factor")
    _add_tunable(p, "fb", "speaker regularization factor")
    _add_tunable(p, "loop_p", "self-transition probability")
    _add_tunable(p, "ahc_threshold", "AHC cosine-similarity stopping threshold")
    _add_tunable(p, "max_iters", "maximum VB iterations")
    _add_tunable(p, "elbo_tol", "relative ELBO convergence tolerance")
    _add_tunable(p, "prune_pi", "drop speakers whose prior falls below this")
    p.set_defaults(func=cmd_diarize)

    p = sub.add_parser("score", help="DER/JER report")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True, nargs="+")
    p.add_argument("--setup", choices=sorted(scoring.SETUPS), default="full")
    p.add_argument("--collar", type=float, help="override the setup's collar (seconds)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("build-ref", help="build an RTTM reference from word transcripts")
    p.add_argument("--words", required=True,
                   help="lines of '<recording> <speaker> <start|-> <end|-> <word|vocal_sound>'")
    p.add_argument("--out")
    p.add_argument("--include-vocal-sounds", action="store_true")
    p.set_defaults(func=cmd_build_ref)

    p = sub.add_parser("oracle", help="compare the engine against exact references")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except NumericalError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except (VBxError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
