import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from mvmtwin import pipeline as PL
from mvmtwin.core import load_study
from mvmtwin.nets import InterpNetConfig, R2UNetConfig
from mvmtwin.phantom import PhantomParams
from mvmtwin.phase import PhaseNetConfig, PhaseTrainConfig
from mvmtwin.temporal import TrainConfig

TINY = PL.PipelineConfig(
    phantom=PhantomParams(H=32, W=32, T=12, r_inner0=6.0, r_outer0=10.0, amp=1.5, seed=50),
    n_train=2, n_val=1, n_test=1,
    ks=[0, 1, 2],
    interp_net=InterpNetConfig(4, 2, 1),
    interp_train=TrainConfig(epochs=1, batch_size=8),
    phase_net=PhaseNetConfig(generator=R2UNetConfig(4, 2, 1), disc_base=4),
    phase_train=PhaseTrainConfig(epochs=1, batch_size=6),
    sweep_ks=[1, 2, 3],
    gan_ks=[1, 2],
)


def test_config_json_roundtrip():
    cfg = replace(TINY, interp_ckpt={1: "a"})
    back = PL.PipelineConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert back == cfg


@pytest.mark.parametrize("bad", [
    {"ks": [-1]}, {"method": "cubic"}, {"nope": 1}, {"phantom": {"r_inner0": 30}},
    {"split": {"train": ["a"], "val": ["a"], "test": ["b"]}}, {"data_dir": "x"},
    {"interp_train": {"learning_rate": 0}}, {"sweep_methods": ["magic"]},
])
def test_config_errors(bad):
    with pytest.raises(PL.ConfigError):
        PL.PipelineConfig.from_json(bad)


def test_split_from_counts():
    split = PL.phantom_split_params(TINY)
    seeds = [p.seed for v in split.values() for p in v]
    assert seeds == [50, 51, 52, 53]
    assert [len(split[k]) for k in ("train", "val", "test")] == [2, 1, 1]


def test_oracle_pipeline_k0_is_exact(tmp_path):
    cfg = replace(TINY, ks=[0], phase_source="oracle")
    bundle = PL.run_full_pipeline(cfg, tmp_path)
    assert all(v == pytest.approx(1.0) for v in bundle["velocity"][0]["pearson"].values())
    rep = json.loads((tmp_path / "reports" / "K0" / "metrics.json").read_text())
    assert rep["aggregate"]["mse"]["mean"] == 0.0


def test_full_pipeline_artifacts(tmp_path):
    bundle = PL.run_full_pipeline(TINY, tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "image_metrics.csv")))
    assert {(int(r["K"]), r["metric"]) for r in rows} == {(k, m) for k in TINY.ks for m in PL.METRIC_KEYS}
    summary = json.loads((tmp_path / "velocity_summary.json").read_text())
    assert set(summary) == {"0", "1", "2"}
    name = bundle["splits"]["test"][0]
    for K in TINY.ks:
        for stage in ("downsampled", "interpolated", "synthesized"):
            load_study(tmp_path / "runs" / f"K{K}" / name / stage)
        assert (tmp_path / "reports" / f"K{K}" / f"{name}_curves.csv").is_file()
        assert (tmp_path / "reports" / f"K{K}" / f"{name}_curves.svg").is_file()
    assert (tmp_path / "ckpt" / "interp_K1" / "manifest.json").is_file()
    assert (tmp_path / "ckpt" / "phase" / "manifest.json").is_file()


def test_pipeline_reuses_checkpoints_and_is_deterministic(tmp_path):
    a = PL.run_full_pipeline(TINY, tmp_path / "a")
    cfg = replace(TINY, train=False, interp_ckpt={K: str(tmp_path / "a" / "ckpt" / f"interp_K{K}") for K in (1, 2)},
                  phase_ckpt=str(tmp_path / "a" / "ckpt" / "phase"))
    b = PL.run_full_pipeline(cfg, tmp_path / "b")
    assert a["image_metrics"] == b["image_metrics"] and a["velocity"] == b["velocity"]
    assert (tmp_path / "a" / "image_metrics.csv").read_bytes() == (tmp_path / "b" / "image_metrics.csv").read_bytes()


def test_missing_checkpoint_is_stage_failure(tmp_path):
    cfg = replace(TINY, train=False, phase_source="oracle")
    with pytest.raises(PL.StageFailure) as err:
        PL.run_full_pipeline(cfg, tmp_path)
    assert err.value.stage == "train-interp"


def test_data_dir_split(tmp_path):
    PL.prepare_data(TINY, tmp_path / "gen")
    names = sorted(p.name for p in (tmp_path / "gen" / "data").iterdir())
    cfg = replace(TINY, data_dir=str(tmp_path / "gen" / "data"),
                  split=PL.SplitSpec(names[:2], [], names[2:3]), ks=[0], phase_source="oracle")
    bundle = PL.run_full_pipeline(cfg, tmp_path / "run")
    assert bundle["splits"]["test"] == names[2:3]
    bad = replace(cfg, split=PL.SplitSpec(["missing"], [], names[:1]))
    with pytest.raises(PL.StageFailure):
        PL.run_full_pipeline(bad, tmp_path / "bad")


def test_ksweep_shape_and_skip(tmp_path):
    cfg = replace(TINY, train=False)
    rep = PL.ksweep_report(cfg, tmp_path)
    assert {r["method"] for r in rep["rows"]} == {"linear", "flow"}
    assert len(rep["skipped"]) == 2 * len(cfg.sweep_ks)
    assert all(np.isfinite(r[m]) for r in rep["rows"] for m in PL.METRIC_KEYS)
    assert (tmp_path / "ksweep_msew1.svg").is_file()


def test_ksweep_all_methods(tmp_path):
    rep = PL.ksweep_report(replace(TINY, sweep_ks=[1, 2]), tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "ksweep.csv")))
    assert len(rows) == 4 * 2 * 6
    assert rep["skipped"] == []


def test_gan_ablation_rows(tmp_path):
    a = PL.gan_ablation(TINY, tmp_path / "a")
    assert {(r["variant"], r["K"]) for r in a["rows"]} == {(v, k) for v in ("no_gan", "gan") for k in TINY.gan_ks}
    b = PL.gan_ablation(TINY, tmp_path / "b")
    assert a == b
