"""`cm` command line: train, eval, probe, stats, synth, lfcc.

All randomness flows from explicit seeds; every run directory receives the
fully resolved configuration so the run can be reproduced byte for byte.
Exit codes: 0 ok, 2 config/IO, 3 compatibility, 4 numeric fault.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, data, evaluate, probe, stats, train
from .dsp import LfccConfig, extract_lfcc, read_wav
from .errors import (
    CompatibilityError,
    ConfigError,
    NumericFaultError,
    WorkbenchError,
)
from .frontend import FrontendConfig, make_frontend, write_features
from .models import BACKEND_KINDS, Backend
from .pipeline import CmModel

log = logging.getLogger("cm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPAT = 3
EXIT_NUMERIC = 4


@dataclass
class RunSection:
    seed: int = 0
    out: str = ""
    jobs: int = 1


@dataclass
class FrontendSection:
    kind: str = "lfcc"
    audio_root: str = ""
    manifest: str = ""
    project: bool = True
    project_dim: int = 128


@dataclass
class LfccSection:
    frame_len_ms: float = 20.0
    frame_shift_ms: float = 10.0
    fft_size: int = 512
    n_filters: int = 20
    n_ceps: int = 20
    include_deltas: bool = True


@dataclass
class BackendSection:
    kind: str = "GF"


@dataclass
class DataSection:
    train_protocol: str = ""
    dev_protocol: str = ""
    eval_protocol: str = ""
    protocol_format: str = "canonical_tsv"


@dataclass
class TrainSection:
    preset: str = "baseline"
    lr0: float = 3e-4
    halve_every: int = 10
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    grad_clip: float = 5.0
    max_segment_s: float = 4.0
    desk_scale: bool = False


@dataclass
class TdcfSection:
    c_miss: float = 1.0
    c_fa: float = 10.0


@dataclass
class ProbeSection:
    bands: str = "default"
    subset: int = 0
    n_bins: int = 50
    order: int = 10


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    frontend: FrontendSection = field(default_factory=FrontendSection)
    lfcc: LfccSection = field(default_factory=LfccSection)
    backend: BackendSection = field(default_factory=BackendSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    tdcf: TdcfSection = field(default_factory=TdcfSection)
    probe: ProbeSection = field(default_factory=ProbeSection)


_SECTION_TYPES = {f.name: f.type for f in fields(RunConfig)}


def load_config(path=None) -> RunConfig:
    """Parse a TOML config, rejecting unknown sections and keys."""
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for section, values in raw.items():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"{path}: unknown section [{section}]")
        target = getattr(cfg, section)
        known = {f.name for f in fields(target)}
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: [{section}] must be a table")
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            setattr(target, key, value)
    if cfg.train.preset not in ("baseline", "external"):
        raise ConfigError(f"unknown train.preset {cfg.train.preset!r}")
    if cfg.backend.kind not in BACKEND_KINDS:
        raise ConfigError(f"unknown backend.kind {cfg.backend.kind!r}")
    # the external preset fills any knob the file did not set explicitly
    if cfg.train.preset == "external":
        given = raw.get("train", {})
        if "desk_scale" not in given:
            cfg.train.desk_scale = True
        ext = train.external_preset(desk_scale=cfg.train.desk_scale)
        if "lr0" not in given:
            cfg.train.lr0 = ext.lr0
        if "batch_size" not in given:
            cfg.train.batch_size = ext.batch_size
    return cfg


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    text = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{text}"'


def dump_config(cfg: RunConfig, path) -> None:
    lines = []
    for section_field in fields(cfg):
        section = getattr(cfg, section_field.name)
        lines.append(f"[{section_field.name}]")
        for key, value in asdict(section).items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def train_config(cfg: RunConfig) -> train.TrainConfig:
    t = cfg.train
    return train.TrainConfig(
        lr0=t.lr0,
        halve_every=t.halve_every,
        batch_size=t.batch_size,
        max_epochs=t.max_epochs,
        patience=t.patience,
        seed=cfg.run.seed,
        grad_clip=t.grad_clip,
        max_segment_s=t.max_segment_s,
        desk_scale=t.desk_scale,
    )


def build_frontend(cfg: RunConfig, seed=None, project=None):
    section = cfg.frontend
    fc = FrontendConfig(
        kind=section.kind,
        lfcc=LfccConfig(**asdict(cfg.lfcc)),
        audio_root=section.audio_root,
        manifest=section.manifest,
        project=section.project if project is None else project,
        project_dim=section.project_dim,
        seed=cfg.run.seed if seed is None else seed,
    )
    return make_frontend(section.kind, fc)


def _parse_bands(text):
    if text == "default":
        return probe.DEFAULT_STOPBANDS
    bands = []
    for chunk in text.split(","):
        low, _, high = chunk.partition(":")
        try:
            bands.append((float(low), float(high)))
        except ValueError:
            raise ConfigError(f"bad band spec {chunk!r} (expected low:high)")
    if not bands:
        raise ConfigError("empty band list")
    return tuple(bands)


def _load_protocol(path, fmt, subset=None):
    if not path:
        raise ConfigError("protocol path not set")
    if not Path(path).exists():
        raise ConfigError(f"protocol not found: {path}")
    return data.parse_protocol(path, format=fmt, subset=subset)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out:
        cfg.run.out = args.out
    if not cfg.run.out:
        raise ConfigError("no output directory (set run.out or --out)")
    fmt = cfg.data.protocol_format
    train_p = _load_protocol(cfg.data.train_protocol, fmt, "train")
    dev_p = _load_protocol(cfg.data.dev_protocol, fmt, "dev")

    out_dir = Path(cfg.run.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out_dir / "config_resolved.toml")

    def factory(seed):
        frontend = build_frontend(cfg, seed=seed)
        backend = Backend(cfg.backend.kind, frontend.feature_dim, seed)
        return CmModel(frontend, backend)

    tcfg = train_config(cfg)
    results = train.train_rounds(
        tcfg, factory, train_p, dev_p, rounds=args.rounds, out_dir=out_dir
    )
    for r, (ckpt, history) in enumerate(results):
        frontend = build_frontend(cfg, seed=ckpt.meta["seed"])
        model = train.restore_model(ckpt, frontend)
        dev_scores = evaluate.score_trials(model, dev_p, jobs=cfg.run.jobs)
        evaluate.write_scores(out_dir / f"round{r}_dev.score", dev_scores)
        log.info(
            "round %d: stopped after epoch %d, best dev loss %.6f",
            r, history[-1].epoch, ckpt.meta["best_dev_loss"],
        )
    print(f"trained {args.rounds} round(s) into {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    ckpt = train.load_checkpoint(args.checkpoint)
    train.check_backend_kind(ckpt, cfg.backend.kind)
    project = False if args.no_project else None
    frontend = build_frontend(cfg, seed=ckpt.meta["seed"], project=project)
    model = train.restore_model(ckpt, frontend)
    protocol = _load_protocol(
        args.protocol or cfg.data.eval_protocol, cfg.data.protocol_format
    )
    scores = evaluate.score_trials(model, protocol, jobs=cfg.run.jobs)
    eer = evaluate.compute_eer(scores, protocol)
    tdcf = evaluate.min_tdcf(
        scores, protocol, evaluate.TdcfParams(cfg.tdcf.c_miss, cfg.tdcf.c_fa)
    )
    lines = ["metric,value"]
    lines.append(f"eer,{eer.eer:.6f}")
    lines.append(f"eer_threshold,{eer.threshold:.6f}")
    lines.append(f"min_tdcf,{tdcf:.6f}")
    table = None
    if args.by:
        table = evaluate.decompose_eer(scores, protocol, by=args.by)
        for key, result in table.items():
            lines.append(f"eer[{args.by}={key}],{result.eer:.6f}")
    print("\n".join(lines))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        evaluate.write_scores(out_dir / "scores.tsv", scores)
        (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    ckpt = train.load_checkpoint(args.checkpoint)
    train.check_backend_kind(ckpt, cfg.backend.kind)
    frontend = build_frontend(cfg, seed=ckpt.meta["seed"])
    model = train.restore_model(ckpt, frontend)
    protocol = _load_protocol(
        args.protocol or cfg.data.eval_protocol, cfg.data.protocol_format
    )
    pcfg = probe.ProbeConfig(
        stopbands=_parse_bands(args.bands or cfg.probe.bands),
        order=cfg.probe.order,
        subset_size=args.subset if args.subset is not None else cfg.probe.subset,
        seed=cfg.run.seed,
        n_bins=cfg.probe.n_bins,
    )
    report = probe.run_probe(model, protocol, pcfg)
    print(f"baseline,,{report.baseline.eer.eer:.6f}")
    for (low, high), result in report.bands.items():
        print(f"stopband,{low:g}:{high:g},{result.eer.eer:.6f}")
    if args.out:
        probe.write_probe_report(args.out, report)
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = load_config(args.config)
    protocol = _load_protocol(
        args.protocol or cfg.data.eval_protocol, cfg.data.protocol_format
    )
    labeled = []
    for path in args.scores:
        labeled.append((Path(path).stem, evaluate.read_scores(path)))
    matrix = stats.build_matrix(labeled, protocol, alpha=args.alpha)
    print("labelA,labelB,p,reject")
    m = len(matrix.labels)
    for i in range(m):
        for j in range(i + 1, m):
            print(
                f"{matrix.labels[i]},{matrix.labels[j]},"
                f"{matrix.p_values[i, j]:.6g},{int(matrix.reject[i, j])}"
            )
    if args.out:
        stats.write_matrix_csv(args.out, matrix)
    return EXIT_OK


def cmd_synth(args) -> int:
    low, _, high = args.band.partition(":")
    try:
        band = (float(low), float(high))
    except ValueError:
        raise ConfigError(f"bad --band {args.band!r} (expected low:high)")
    protocol = data.generate_synthetic_dataset(
        args.seed, args.n_per_class, band, args.out
    )
    print(
        f"wrote {len(protocol)} trials ({args.n_per_class} per class) "
        f"to {args.out}"
    )
    return EXIT_OK


def cmd_lfcc(args) -> int:
    cfg = load_config(args.config)
    wave = read_wav(args.wav)
    feats = extract_lfcc(wave, LfccConfig(**asdict(cfg.lfcc)))
    out = args.out or str(Path(args.wav).with_suffix(".cmfeat"))
    write_features(out, feats.frames[None, :, :])
    print(f"{out}: K=1 N={feats.n_frames} D={feats.dim}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cm",
        description="speech anti-spoofing countermeasure workbench",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one or more rounds")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--rounds", type=int, default=1)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default="")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a protocol and print metrics")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--protocol", default="")
    p_eval.add_argument("--by", choices=["attack", "codec"], default=None)
    p_eval.add_argument("--no-project", action="store_true")
    p_eval.add_argument("--out", default="")
    p_eval.set_defaults(func=cmd_eval)

    p_probe = sub.add_parser("probe", help="band-stop probing analysis")
    p_probe.add_argument("--config", required=True)
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--protocol", default="")
    p_probe.add_argument("--bands", default="")
    p_probe.add_argument("--subset", type=int, default=None)
    p_probe.add_argument("--out", default="")
    p_probe.set_defaults(func=cmd_probe)

    p_stats = sub.add_parser("stats", help="pairwise significance matrix")
    p_stats.add_argument("scores", nargs="+")
    p_stats.add_argument("--config", default=None)
    p_stats.add_argument("--protocol", default="")
    p_stats.add_argument("--alpha", type=float, default=0.05)
    p_stats.add_argument("--out", default="")
    p_stats.set_defaults(func=cmd_stats)

    p_synth = sub.add_parser("synth", help="generate the synthetic corpus")
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--n-per-class", type=int, required=True)
    p_synth.add_argument("--band", required=True, help="artifact band low:high Hz")
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_lfcc = sub.add_parser("lfcc", help="dump LFCC features as CMFEAT")
    p_lfcc.add_argument("wav")
    p_lfcc.add_argument("--config", default=None)
    p_lfcc.add_argument("--out", default="")
    p_lfcc.set_defaults(func=cmd_lfcc)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CM_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except NumericFaultError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (WorkbenchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
