"""Command-line surface: subcommands, exit codes, reproducibility."""

import filecmp
from pathlib import Path

import numpy as np
import pytest

from antispoof import cli
from antispoof.errors import ConfigError


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Tiny corpus plus a config file pointing at it."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    rc = cli.main(
        [
            "synth",
            "--seed", "13",
            "--n-per-class", "6",
            "--band", "2800:3200",
            "--out", str(corpus),
        ]
    )
    assert rc == 0
    config = root / "cm.toml"
    config.write_text(
        f"""
[run]
seed = 13

[frontend]
kind = "lfcc"
audio_root = "{corpus}"

[backend]
kind = "GF"

[data]
train_protocol = "{corpus}/protocol_train.tsv"
dev_protocol = "{corpus}/protocol_dev.tsv"
eval_protocol = "{corpus}/protocol_eval.tsv"

[train]
preset = "baseline"
batch_size = 4
max_epochs = 3
patience = 5
"""
    )
    return root, corpus, config


def test_config_unknown_key_rejected(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nlearning_rate = 1.0\n")
    with pytest.raises(ConfigError):
        cli.load_config(bad)
    bad.write_text("[nosuchsection]\nx = 1\n")
    with pytest.raises(ConfigError):
        cli.load_config(bad)


def test_external_preset_defaults(tmp_path):
    cfg_file = tmp_path / "c.toml"
    cfg_file.write_text('[train]\npreset = "external"\n')
    cfg = cli.load_config(cfg_file)
    assert cfg.train.batch_size == 8
    assert cfg.train.lr0 == pytest.approx(1e-4)
    assert cfg.train.desk_scale
    cfg_file.write_text('[train]\npreset = "external"\ndesk_scale = false\n')
    cfg = cli.load_config(cfg_file)
    assert cfg.train.lr0 == pytest.approx(1e-6)


def test_train_rounds_and_artifacts(workdir):
    root, corpus, config = workdir
    out = root / "run1"
    rc = cli.main(
        ["train", "--config", str(config), "--rounds", "2", "--out", str(out)]
    )
    assert rc == 0
    for r in range(2):
        assert (out / f"round{r}.cmck").exists()
        assert (out / f"round{r}_epochs.csv").exists()
        assert (out / f"round{r}_dev.score").exists()
    assert (out / "config_resolved.toml").exists()
    # distinct seeds produce distinct checkpoints
    assert (out / "round0.cmck").read_bytes() != (out / "round1.cmck").read_bytes()


def test_train_missing_protocol_exit_2_no_outputs(workdir, capsys):
    root, corpus, config = workdir
    bad_cfg = root / "bad.toml"
    bad_cfg.write_text(
        config.read_text().replace("protocol_train.tsv", "absent.tsv")
    )
    out = root / "never"
    rc = cli.main(["train", "--config", str(bad_cfg), "--out", str(out)])
    assert rc == 2
    assert not out.exists()


def test_train_rerun_from_resolved_config_byte_identical(workdir):
    root, corpus, config = workdir
    out = root / "rep"
    rc = cli.main(["train", "--config", str(config), "--out", str(out)])
    assert rc == 0
    artifacts = ["round0.cmck", "round0_epochs.csv", "round0_dev.score",
                 "config_resolved.toml"]
    snapshot = {rel: (out / rel).read_bytes() for rel in artifacts}
    # the echoed config fully reproduces the run, including its own echo
    rc = cli.main(["train", "--config", str(out / "config_resolved.toml")])
    assert rc == 0
    for rel in artifacts:
        assert (out / rel).read_bytes() == snapshot[rel], rel


def test_eval_prints_metrics_and_writes_scores(workdir, capsys):
    root, corpus, config = workdir
    out = root / "run1"
    eval_out = root / "eval1"
    rc = cli.main(
        [
            "eval",
            "--config", str(config),
            "--checkpoint", str(out / "round0.cmck"),
            "--by", "attack",
            "--out", str(eval_out),
        ]
    )
    assert rc == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed[0] == "metric,value"
    assert printed[1].startswith("eer,")
    assert any(line.startswith("min_tdcf,") for line in printed)
    attack_rows = [l for l in printed if l.startswith("eer[attack=")]
    assert len(attack_rows) == 1  # single synthetic pseudo-attack
    assert (eval_out / "scores.tsv").exists()


def test_eval_kind_mismatch_exit_3(workdir):
    root, corpus, config = workdir
    llgf_cfg = root / "llgf.toml"
    llgf_cfg.write_text(config.read_text().replace('kind = "GF"', 'kind = "LLGF"'))
    rc = cli.main(
        [
            "eval",
            "--config", str(llgf_cfg),
            "--checkpoint", str(root / "run1" / "round0.cmck"),
        ]
    )
    assert rc == 3


def test_stats_identical_score_files(workdir, capsys):
    root, corpus, config = workdir
    score = root / "run1" / "round0_dev.score"
    rc = cli.main(
        [
            "stats",
            str(score), str(score),
            "--protocol", str(corpus / "protocol_dev.tsv"),
            "--alpha", "0.05",
        ]
    )
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "labelA,labelB,p,reject"
    label, label2, p, reject = lines[1].split(",")
    assert float(p) == 1.0 and reject == "0"


def test_probe_subcommand(workdir, capsys):
    root, corpus, config = workdir
    probe_out = root / "probe1"
    rc = cli.main(
        [
            "probe",
            "--config", str(config),
            "--checkpoint", str(root / "run1" / "round0.cmck"),
            "--bands", "800:2400,2400:4000",
            "--out", str(probe_out),
        ]
    )
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("baseline,,")
    assert len(lines) == 3
    assert (probe_out / "bands.csv").exists()


def test_lfcc_dump_and_external_equivalence(workdir, capsys):
    root, corpus, config = workdir
    protocol = corpus / "protocol_eval.tsv"
    import antispoof.data as data_mod
    records = list(data_mod.parse_protocol(protocol))

    # dump LFCC features for each eval trial, build a manifest
    feat_dir = root / "feats"
    feat_dir.mkdir()
    entries = []
    for rec in records:
        out_path = feat_dir / f"{rec.trial_id}.cmfeat"
        rc = cli.main(
            ["lfcc", str(corpus / rec.audio_path), "--out", str(out_path)]
        )
        assert rc == 0
        entries.append((rec.trial_id, out_path.name))
    from antispoof.frontend import write_manifest

    write_manifest(feat_dir / "manifest.tsv", entries)

    ext_cfg = root / "ext.toml"
    ext_cfg.write_text(
        config.read_text().replace(
            'kind = "lfcc"',
            f'kind = "external"\nmanifest = "{feat_dir}/manifest.tsv"',
        )
    )
    capsys.readouterr()
    for name, cfg_path, extra in (
        ("direct", config, []),
        ("viafile", ext_cfg, ["--no-project"]),
    ):
        rc = cli.main(
            [
                "eval",
                "--config", str(cfg_path),
                "--checkpoint", str(root / "run1" / "round0.cmck"),
                "--protocol", str(protocol),
                "--out", str(root / f"eq_{name}"),
            ]
            + extra
        )
        assert rc == 0
    a = (root / "eq_direct" / "scores.tsv").read_bytes()
    b = (root / "eq_viafile" / "scores.tsv").read_bytes()
    assert a == b


def test_synth_deterministic_via_cli(tmp_path):
    for name in ("s1", "s2"):
        rc = cli.main(
            [
                "synth",
                "--seed", "5",
                "--n-per-class", "3",
                "--band", "2800:3200",
                "--out", str(tmp_path / name),
            ]
        )
        assert rc == 0
    for rel in ["protocol_all.tsv"]:
        assert (tmp_path / "s1" / rel).read_bytes() == (
            tmp_path / "s2" / rel
        ).read_bytes()
    for wav in sorted((tmp_path / "s1" / "wavs").iterdir()):
        assert filecmp.cmp(
            wav, tmp_path / "s2" / "wavs" / wav.name, shallow=False
        )


def test_bad_band_spec_exit_2(tmp_path):
    rc = cli.main(
        [
            "synth",
            "--seed", "1",
            "--n-per-class", "2",
            "--band", "nonsense",
            "--out", str(tmp_path / "x"),
        ]
    )
    assert rc == 2
