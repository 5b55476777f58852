"""cmexport command line: `export` writes CMFEAT features + manifest,
`verify` audits an existing manifest against a protocol."""

import argparse
import sys
from pathlib import Path

from .cmfeat import CmfeatError
from .export import ExportError, ExportSpec, export_features, verify_manifest


def _wav_list(args):
    paths = []
    if args.wavs:
        for line in Path(args.wavs).read_text(encoding="utf-8").splitlines():
            if line.strip():
                paths.append(line.strip())
    paths.extend(args.wav_files)
    if not paths:
        raise ExportError("no input WAV files (use --wavs or positional paths)")
    return paths


def cmd_export(args) -> int:
    spec = ExportSpec(
        model_id=args.model,
        wav_paths=_wav_list(args),
        out_dir=args.out,
        layers=args.layers,
    )
    entries = export_features(spec)
    print(f"exported {len(entries)} trials to {args.out}")
    return 0


def cmd_verify(args) -> int:
    report = verify_manifest(args.manifest, args.protocol)
    for issue in report.issues:
        print(issue)
    print(
        f"checked {report.n_checked} entries: "
        + ("ok" if report.ok() else f"{len(report.issues)} issue(s)")
    )
    return 0 if report.ok() else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cmexport",
        description="export speech-model hidden states as CMFEAT files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_export = sub.add_parser("export", help="run a model and write features")
    p_export.add_argument("--model", required=True)
    p_export.add_argument("--layers", default="all")
    p_export.add_argument("--wavs", default="", help="text file listing WAV paths")
    p_export.add_argument("wav_files", nargs="*", help="WAV paths")
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_export)

    p_verify = sub.add_parser("verify", help="audit a manifest")
    p_verify.add_argument("manifest")
    p_verify.add_argument("--protocol", default=None)
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExportError, CmfeatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
