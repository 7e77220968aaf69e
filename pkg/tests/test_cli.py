import json

import jsonschema
import numpy as np
import pytest
import yaml

from embprobe.cli import (REPORT_SCHEMA, config_fingerprint, main,
                          resolve_config, validate_task)
from embprobe.data_model import load_embeddings, load_manifest
from embprobe.trait_extract import read_trait_csv, read_wav


def pipeline_config(outdir):
    return {
        "seed": 424242,
        "outdir": str(outdir),
        "manifest": "manifest.csv",
        "embeddings": {"cm": "emb/cm.emb"},
        "traits_csv": "traits.csv",
        "partition": {"train_fraction": 0.9},
        "train": {"epochs": 40, "hidden_dim": 48, "decay_every": 20},
        "metrics": {"n_boot": 300, "n_perm": 199},
        "tasks": [
            {"trait": "gender", "kind": "classification", "scheme": "T02"},
            {"trait": "attack_id", "kind": "classification", "scheme": "T03"},
            {"trait": "f0_mean", "kind": "regression", "scheme": "T02"},
        ],
        "distance": {"system": "cm", "kinds": ["embedding", "encoder_spectral"],
                     "chunk_seconds": 1.0, "bins": 30},
        "perturb": {"rates": [1.0, 1.1], "audio_outdir": "perturbed"},
        "sweep": {"rates": [0.8, 0.9, 1.0, 1.1, 1.2], "score_dir": "scores"},
        "synth": {
            "n_speakers": 12,
            "utts_per_speaker": 16,
            "dim": 24,
            "noise_sigma": 0.05,
            "spoof_fraction": 0.5,
            "planted": [
                {"trait": "gender", "kind": "cluster", "strength": 1.0},
                {"trait": "attack_id", "kind": "cluster", "strength": 1.0},
                {"trait": "f0_mean", "kind": "linear_subspace", "strength": 1.0},
            ],
            "audio": {"dir": "audio", "duration_s": 0.5, "sr": 16000,
                      "freq_trait": "f0_mean", "freq_base": 200.0, "freq_scale": 25.0},
            "scores": {"dir": "scores", "rates": [0.8, 0.9, 1.0, 1.1, 1.2],
                       "n_bonafide": 80, "n_spoof": 80,
                       "base_separation": 4.0, "decay": 8.0},
        },
    }


def write_config(tmp_path, cfg):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def run(cmd, cfg_path, extra=()):
    return main([cmd, "--config", cfg_path, *extra])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Full pipeline run shared by the read-only assertions below."""
    outdir = tmp_path_factory.mktemp("run")
    cfg = pipeline_config(outdir)
    cfg_path = write_config(outdir, cfg)
    for cmd in ("synth", "partition", "traits", "probe", "distance", "sweep", "report"):
        assert run(cmd, cfg_path) == 0, cmd
    return outdir, cfg, cfg_path


def test_synth_emits_loadable_corpus(pipeline):
    outdir, _, _ = pipeline
    manifest = load_manifest(outdir / "manifest.csv")
    table = load_embeddings(outdir / "emb" / "cm.emb")
    assert len(manifest) == 192
    assert table.dim == 24
    assert set(table.entries) == {r.utt_id for r in manifest.rows}
    assert all(r.audio_path for r in manifest.rows)


def test_partition_outputs(pipeline):
    outdir, _, _ = pipeline
    t02 = json.loads((outdir / "splits" / "T02.json").read_text())
    train_spk = {u.rsplit("_", 1)[0] for u in t02["train"]}
    eval_spk = {u.rsplit("_", 1)[0] for u in t02["eval"]}
    assert train_spk & eval_spk == set()
    t03 = json.loads((outdir / "splits" / "T03.json").read_text())
    assert set(t03["train"]) & set(t03["eval"]) == set()


def test_traits_cover_manifest(pipeline):
    outdir, _, _ = pipeline
    manifest = load_manifest(outdir / "manifest.csv")
    traits = read_trait_csv(outdir / "traits.csv")
    assert set(traits) == {r.utt_id for r in manifest.rows}
    assert all(tv.duration is not None for tv in traits.values())
    assert all(tv.f0_mean is not None for tv in traits.values())  # tones are voiced


def test_probe_report_structure(pipeline):
    outdir, _, _ = pipeline
    report = json.loads((outdir / "probe_report.json").read_text())
    assert len(report["tasks"]) == 3
    by_trait = {t["trait"]: t for t in report["tasks"]}
    assert by_trait["gender"]["status"] == "ok"
    gm = by_trait["gender"]["metrics"]
    assert gm["ci_low"] <= gm["accuracy"] <= gm["ci_high"]
    assert gm["accuracy"] >= 0.95  # planted at strength 1
    am = by_trait["attack_id"]["metrics"]
    assert am["accuracy"] >= 0.90
    assert len(am["confusion"]) == 5  # 4 attacks + bonafide
    rm = by_trait["f0_mean"]["metrics"]
    assert rm["r_squared"] >= 0.8
    assert rm["p_value"] <= 0.01
    assert (outdir / "probes" / "cm_gender_T02.prb").exists()
    assert (outdir / "charts" / "classification_accuracy.svg").exists()
    assert (outdir / "charts" / "regression_r2.svg").exists()


def test_distance_outputs(pipeline):
    outdir, _, _ = pipeline
    summary = json.loads((outdir / "distance_summary.json").read_text())
    for kind in ("embedding", "encoder_spectral"):
        assert summary[kind]["female"]["count"] > 0
        assert 0.0 <= summary[kind]["female"]["overlap_with_peer"] <= 1.0
        csv_path = outdir / f"distance_records_{kind}.csv"
        n_rows = len(csv_path.read_text().splitlines()) - 1
        assert n_rows == summary[kind]["female"]["count"] + summary[kind]["male"]["count"]
        assert (outdir / "charts" / f"distance_{kind}.svg").exists()


def test_sweep_outputs(pipeline):
    outdir, _, _ = pipeline
    sweep = json.loads((outdir / "sweep_eer.json").read_text())
    assert set(sweep) == {"0.8", "0.9", "1", "1.1", "1.2"}
    assert sweep["1"]["eer"] < sweep["0.8"]["eer"]
    assert sweep["1"]["eer"] < sweep["1.2"]["eer"]
    table = (outdir / "sweep_eer.csv").read_text().splitlines()
    assert len(table) == 6  # header + one row per rate


def test_report_merges_sections(pipeline):
    outdir, cfg, _ = pipeline
    report = json.loads((outdir / "report.json").read_text())
    assert report["version"] == 1
    assert report["tasks"] is not None
    assert report["distance"] is not None
    assert report["sweep"] is not None
    assert report["config_fingerprint"] == config_fingerprint(resolve_config(cfg))


def test_report_validates_against_schema(pipeline):
    outdir, _, _ = pipeline
    report = json.loads((outdir / "report.json").read_text())
    jsonschema.validate(report, REPORT_SCHEMA)


def test_probe_parallel_jobs_identical_report(pipeline):
    outdir, _, cfg_path = pipeline
    before = (outdir / "probe_report.json").read_bytes()
    assert run("probe", cfg_path, extra=("--jobs", "3")) == 0
    assert (outdir / "probe_report.json").read_bytes() == before


def test_rerun_report_idempotent(pipeline):
    outdir, _, cfg_path = pipeline
    before = (outdir / "report.json").read_bytes()
    assert run("report", cfg_path) == 0
    assert (outdir / "report.json").read_bytes() == before


def test_perturb_tree(pipeline):
    outdir, _, cfg_path = pipeline
    assert run("perturb", cfg_path) == 0
    manifest = load_manifest(outdir / "manifest.csv")
    row = manifest.rows[0]
    original = (outdir / row.audio_path).read_bytes()
    copied = (outdir / "perturbed" / "r1" / f"{row.utt_id}.wav").read_bytes()
    assert copied == original  # rate 1.0 re-encodes to identical bytes
    shifted = read_wav(outdir / "perturbed" / "r1.1" / f"{row.utt_id}.wav")
    source = read_wav(outdir / row.audio_path)
    assert abs(len(shifted.samples) * 1.1 - len(source.samples)) <= 1.0 + 1e-9


def test_probe_failure_sets_exit_code(tmp_path):
    outdir = tmp_path / "out"
    cfg = pipeline_config(outdir)
    cfg["tasks"] = [{"trait": "gender", "kind": "classification", "scheme": "T02"}]
    cfg_path = write_config(tmp_path, cfg)
    assert run("synth", cfg_path) == 0
    # no partition step: probe task cannot find its split file
    assert run("probe", cfg_path) == 1
    failures = json.loads((outdir / "failures.json").read_text())
    assert failures["failures"][0]["status"] == "failed"
    assert "split file missing" in failures["failures"][0]["error"]


def test_unknown_config_section_errors(tmp_path):
    cfg_path = write_config(tmp_path, {"outdir": str(tmp_path / "o")})
    assert run("distance", cfg_path) == 1
    assert run("sweep", cfg_path) == 1


def test_validate_task_rules():
    validate_task({"trait": "gender", "kind": "classification", "scheme": "T02"})
    validate_task({"trait": "attack_type", "kind": "classification", "scheme": "T03"})
    validate_task({"trait": "snr", "kind": "regression", "scheme": "T01"})
    with pytest.raises(ValueError, match="attack traits require"):
        validate_task({"trait": "attack_id", "kind": "classification", "scheme": "T02"})
    with pytest.raises(ValueError, match="speaker traits require"):
        validate_task({"trait": "gender", "kind": "classification", "scheme": "T03"})
    with pytest.raises(ValueError, match="categorical"):
        validate_task({"trait": "age", "kind": "regression", "scheme": "T02"})
    with pytest.raises(ValueError, match="unknown scheme"):
        validate_task({"trait": "gender", "kind": "classification", "scheme": "T9"})
    with pytest.raises(ValueError, match="classification target"):
        validate_task({"trait": "gender", "kind": "regression", "scheme": "T02"})


def test_fingerprint_changes_iff_config_changes(tmp_path):
    cfg = pipeline_config(tmp_path / "o")
    a = config_fingerprint(resolve_config(cfg))
    assert a == config_fingerprint(resolve_config(json.loads(json.dumps(cfg))))
    cfg2 = json.loads(json.dumps(cfg))
    cfg2["train"]["epochs"] = 9
    assert config_fingerprint(resolve_config(cfg2)) != a


def test_seed_override_changes_outputs(tmp_path):
    cfg = pipeline_config(tmp_path / "o")
    base = resolve_config(cfg)
    assert resolve_config(cfg, seed=7)["seed"] == 7
    assert base["seed"] == 424242


def test_synth_multiple_systems_with_overrides(tmp_path):
    outdir = tmp_path / "o"
    cfg = pipeline_config(outdir)
    cfg["embeddings"] = {"asv": "emb/asv.emb", "cm": "emb/cm.emb"}
    cfg["synth"]["systems"] = {
        "asv": {"dim": 40, "seed": 1},
        "cm": {"dim": 24, "seed": 2},
    }
    cfg["synth"].pop("audio")
    cfg_path = write_config(tmp_path, cfg)
    assert run("synth", cfg_path) == 0
    asv = load_embeddings(outdir / "emb" / "asv.emb")
    cm = load_embeddings(outdir / "emb" / "cm.emb")
    assert asv.dim == 40
    assert cm.dim == 24
    assert set(asv.entries) == set(cm.entries)
