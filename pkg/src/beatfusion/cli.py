"""Command-line front end: generate records, run the filter, score beats.

Every command prints a machine-readable ``key=value`` summary on stdout and
exits 0 on success; failures produce a diagnostic on stderr and a nonzero
exit code without leaving partial output files behind.
"""

from __future__ import annotations

import argparse
import sys

from .features import RawAnnotations, build_observations
from .filtering import FilterConfig, FilterTrace, run_filter
from .io import (
    ParseError,
    Record,
    commit_files,
    config_with_window,
    read_annotations,
    read_config,
    read_record,
    read_synth_spec,
    render_annotations,
    render_record,
    render_trace,
)
from .scoring import aggregate, score
from .synth import generate


def run_record(record: Record, cfg: FilterConfig,
               ecg_ann: RawAnnotations | None = None,
               abp_ann: RawAnnotations | None = None):
    """Feature extraction plus filtering for one record.

    External annotations, when given, replace the stand-in detectors for that
    channel. Returns (trace, beats, observation set).
    """
    obset = build_observations(
        record.channels["ECG"], record.channels["ABP"], record.fs,
        nominal_window_s=cfg.model.window_s, ecg_ann=ecg_ann, abp_ann=abp_ann)
    trace, beats = run_filter(obset.observations,
                              config_with_window(cfg, obset.window_s),
                              fs=record.fs)
    return trace, beats, obset


def cmd_synth(args) -> int:
    spec = read_synth_spec(args.spec)
    ecg, abp, truth = generate(spec)
    record = Record(fs=spec.fs, channels={"ECG": ecg, "ABP": abp})
    commit_files({
        args.out_record: render_record(record),
        args.out_truth: render_annotations(truth),
    })
    print(f"samples={record.length}")
    print(f"fs={spec.fs:g}")
    print(f"beats={len(truth)}")
    return 0


def cmd_run(args) -> int:
    record = read_record(args.record)
    cfg = read_config(args.config)
    ecg_ann = read_annotations(args.ecg_ann, record.fs) if args.ecg_ann else None
    abp_ann = read_annotations(args.abp_ann, record.fs) if args.abp_ann else None
    trace, beats, _ = run_record(record, cfg, ecg_ann=ecg_ann, abp_ann=abp_ann)
    files = {args.out: render_annotations(beats)}
    if args.trace:
        files[args.trace] = render_trace(trace)
    commit_files(files)
    print(f"windows={trace.n_windows}")
    print(f"beats={len(beats)}")
    print(f"degenerate_steps={trace.degenerate_steps}")
    return 0


def cmd_score(args) -> int:
    if len(args.ref) != len(args.test):
        print("error: --ref and --test must be given the same number of times",
              file=sys.stderr)
        return 1
    tol_s = args.tol_ms / 1000.0
    reports = []
    for ref_path, test_path in zip(args.ref, args.test):
        reference = read_annotations(ref_path, args.fs)
        test = read_annotations(test_path, args.fs)
        reports.append(score(reference, test, tol_s))
    if len(reports) == 1:
        rep = reports[0]
        print(f"tp={rep.tp}")
        print(f"fp={rep.fp}")
        print(f"fn={rep.fn}")
        print(f"sensitivity={rep.sensitivity:.6g}")
        print(f"positive_predictivity={rep.positive_predictivity:.6g}")
    else:
        for i, rep in enumerate(reports):
            print(f"record_{i}.sensitivity={rep.sensitivity:.6g}")
            print(f"record_{i}.positive_predictivity={rep.positive_predictivity:.6g}")
        mean_se, mean_ppv = aggregate(reports)
        print(f"mean_sensitivity={mean_se:.6g}")
        print(f"mean_positive_predictivity={mean_ppv:.6g}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beatfusion",
        description="Annotate heart beats in dual-channel ECG/ABP records "
                    "with a particle filter.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic record")
    p_synth.add_argument("--spec", required=True, help="synthesis recipe file")
    p_synth.add_argument("--out-record", required=True)
    p_synth.add_argument("--out-truth", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="annotate a record")
    p_run.add_argument("--record", required=True)
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True, help="output beat annotations")
    p_run.add_argument("--trace", help="optional per-window trace output")
    p_run.add_argument("--ecg-ann", help="external ECG annotations replacing the detector")
    p_run.add_argument("--abp-ann", help="external ABP annotations replacing the detector")
    p_run.set_defaults(func=cmd_run)

    p_score = sub.add_parser("score", help="compare beats against a reference")
    p_score.add_argument("--ref", action="append", required=True)
    p_score.add_argument("--test", action="append", required=True)
    p_score.add_argument("--fs", type=float, required=True)
    p_score.add_argument("--tol-ms", type=float, default=150.0)
    p_score.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
