"""Stage orchestration, configuration, the K-sweep and the GAN ablation.

Stages talk to each other only through study directories on disk: data ->
downsampled -> interpolated -> synthesized, each written with
:func:`mvmtwin.core.save_study` and read back by the next stage.
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from . import metrics, velocity
from .baselines import interpolate_series_baseline
from .core import CineStudy, DownsampleSpec, drop_frames, load_study, save_study
from .nets import InterpNetConfig, R2UNetConfig
from .phantom import PhantomParams, generate_phantom, jitter_params
from .phase import (NoiseModel, PhaseModel, PhaseNetConfig, PhaseTrainConfig,
                    build_phase_dataset, oracle_generator, synthesize_phases, train_phase)
from .svg import write_line_chart
from .temporal import InterpModel, TrainConfig, build_interp_dataset, interpolate_series, train_interp
from .toy import ToyConfig

log = logging.getLogger(__name__)

METHODS = ("learned", "linear", "flow")
SWEEP_METHODS = ("linear", "flow", "vn", "ours")
METRIC_KEYS = ("mse", "msew1", "msew2", "psnr", "ssim", "dice")


class ConfigError(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.diagnostics = getattr(cause, "diagnostics", None)


@contextlib.contextmanager
def stage(name: str):
    """Re-raise anything escaping the block as a :class:`StageFailure`."""
    try:
        yield
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(name, exc) from exc


@dataclass
class SplitSpec:
    train: list[str]
    val: list[str]
    test: list[str]

    def __post_init__(self):
        names = [*self.train, *self.val, *self.test]
        if len(set(names)) != len(names):
            raise ConfigError("train/val/test splits must be disjoint")
        if not self.train or not self.test:
            raise ConfigError("train and test splits must be non-empty")


@dataclass
class PipelineConfig:
    # Study directory root; None generates a phantom cohort instead.
    data_dir: str | None = None
    split: SplitSpec | None = None
    phantom: PhantomParams = field(default_factory=lambda: PhantomParams(seed=100))
    n_train: int = 8
    n_val: int = 2
    n_test: int = 2
    ks: list[int] = field(default_factory=lambda: list(range(7)))
    method: str = "learned"
    seed: int = 0
    interp_net: InterpNetConfig = field(default_factory=lambda: InterpNetConfig(16, 3, 2))
    interp_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, augment=True))
    anchor_stride: int | None = None
    # "trained" or "oracle" (reference phases, isolates the other stages).
    phase_source: str = "trained"
    phase_net: PhaseNetConfig = field(
        default_factory=lambda: PhaseNetConfig(generator=R2UNetConfig(8, 3, 2), disc_base=16))
    phase_train: PhaseTrainConfig = field(default_factory=lambda: PhaseTrainConfig(epochs=20))
    noise: NoiseModel = field(default_factory=NoiseModel)
    systole_end: int | None = None
    # Pre-trained checkpoints; K -> directory.
    interp_ckpt: dict[int, str] = field(default_factory=dict)
    vn_ckpt: dict[int, str] = field(default_factory=dict)
    phase_ckpt: str | None = None
    train: bool = True
    sweep_ks: list[int] = field(default_factory=lambda: list(range(1, 7)))
    sweep_methods: list[str] = field(default_factory=lambda: list(SWEEP_METHODS))
    gan_ks: list[int] = field(default_factory=lambda: [4, 5, 6])
    gan_weight: float = 0.05
    toy: ToyConfig = field(default_factory=ToyConfig)

    def __post_init__(self):
        if any(int(k) < 0 for k in [*self.ks, *self.sweep_ks, *self.gan_ks]):
            raise ConfigError("K values must be >= 0")
        if any(int(k) < 1 for k in self.gan_ks):
            raise ConfigError("gan_ks must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.phase_source not in ("trained", "oracle"):
            raise ConfigError("phase_source must be 'trained' or 'oracle'")
        if not set(self.sweep_methods) <= set(SWEEP_METHODS):
            raise ConfigError(f"sweep_methods must be drawn from {SWEEP_METHODS}")
        if self.data_dir is not None and self.split is None:
            raise ConfigError("data_dir needs an explicit split")
        if min(self.n_train, self.n_test) < 1 or self.n_val < 0:
            raise ConfigError("need n_train >= 1, n_test >= 1, n_val >= 0")

    _NESTED = {
        "split": SplitSpec,
        "phantom": PhantomParams,
        "interp_net": InterpNetConfig,
        "interp_train": TrainConfig,
        "phase_net": PhaseNetConfig,
        "phase_train": PhaseTrainConfig,
        "noise": NoiseModel,
        "toy": ToyConfig,
    }

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            for key, typ in cls._NESTED.items():
                if isinstance(kw.get(key), dict):
                    kw[key] = typ(**kw[key])
            for key in ("interp_ckpt", "vn_ckpt"):
                if key in kw:
                    kw[key] = {int(k): v for k, v in kw[key].items()}
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> dict:
        d = asdict(self)
        d["interp_ckpt"] = {str(k): v for k, v in self.interp_ckpt.items()}
        d["vn_ckpt"] = {str(k): v for k, v in self.vn_ckpt.items()}
        return d


def load_config(path) -> PipelineConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return PipelineConfig.from_json(d)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "to_json"):
        return _clean(obj.to_json())
    return obj


def write_csv(path, header: list[str], rows: list[list]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (f"{v:.8g}" if isinstance(v, float) else v) for v in r])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


# ---------------------------------------------------------------- data

def phantom_split_params(cfg: PipelineConfig) -> dict[str, list[PhantomParams]]:
    """Jittered phantom subjects with seeds ``phantom.seed + i``, assigned in
    order to train, val and test."""
    n = cfg.n_train + cfg.n_val + cfg.n_test
    params = [jitter_params(cfg.phantom, cfg.phantom.seed + i) for i in range(n)]
    return {
        "train": params[: cfg.n_train],
        "val": params[cfg.n_train : cfg.n_train + cfg.n_val],
        "test": params[cfg.n_train + cfg.n_val :],
    }


def prepare_data(cfg: PipelineConfig, out) -> dict[str, list[Path]]:
    """Materialize the split as study directories and return their paths."""
    with stage("data"):
        if cfg.data_dir is not None:
            root = Path(cfg.data_dir)
            split = {s: [root / name for name in getattr(cfg.split, s)] for s in ("train", "val", "test")}
            for paths in split.values():
                for p in paths:
                    if not p.is_dir():
                        raise FileNotFoundError(f"study directory {p} not found")
            return split
        root = Path(out) / "data"
        split = {}
        for name, params in phantom_split_params(cfg).items():
            split[name] = []
            for p in params:
                d = root / f"phantom-{p.seed}"
                save_study(generate_phantom(p), d)
                split[name].append(d)
        return split


def load_split(paths: dict[str, list[Path]]) -> dict[str, list[CineStudy]]:
    with stage("data"):
        return {k: [load_study(p) for p in v] for k, v in paths.items()}


# ---------------------------------------------------------------- models

def _interp_seed(cfg: PipelineConfig, K: int) -> int:
    return cfg.seed * 1000 + K


def train_interp_model(cfg: PipelineConfig, K: int, train: list[CineStudy], val: list[CineStudy],
                       multi_head: bool = True, adversarial_weight: float | None = None) -> InterpModel:
    net_cfg = replace(cfg.interp_net, multi_head=multi_head)
    tcfg = replace(cfg.interp_train, seed=_interp_seed(cfg, K))
    if adversarial_weight is not None:
        tcfg = replace(tcfg, adversarial_weight=adversarial_weight)
    ds = build_interp_dataset(train, K, cfg.anchor_stride, tcfg.crop_size, tcfg.w1_pad)
    vds = build_interp_dataset(val, K, None, tcfg.crop_size, tcfg.w1_pad) if val else None
    return train_interp(ds, net_cfg, tcfg, vds)


def get_interp_model(cfg: PipelineConfig, K: int, studies: dict, ckpt_root, multi_head: bool = True):
    """Load the configured checkpoint, else train (and save) if allowed,
    else return None."""
    ckpts = cfg.interp_ckpt if multi_head else cfg.vn_ckpt
    if K in ckpts:
        with stage("load-interp"):
            return InterpModel.load(ckpts[K])
    if not cfg.train:
        return None
    with stage("train-interp"):
        model = train_interp_model(cfg, K, studies["train"], studies["val"], multi_head)
        model.save(Path(ckpt_root) / f"{'interp' if multi_head else 'vn'}_K{K}")
        return model


def get_phase_model(cfg: PipelineConfig, studies: dict, ckpt_root):
    if cfg.phase_ckpt is not None:
        with stage("load-phase"):
            return PhaseModel.load(cfg.phase_ckpt)
    if not cfg.train:
        raise StageFailure("train-phase", RuntimeError("no phase checkpoint and training disabled"))
    with stage("train-phase"):
        tcfg = replace(cfg.phase_train, seed=cfg.seed)
        ds = build_phase_dataset(studies["train"])
        vds = build_phase_dataset(studies["val"]) if studies["val"] else None
        model = train_phase(ds, cfg.phase_net, tcfg, vds, cfg.noise)
        model.save(Path(ckpt_root) / "phase")
        return model


# ---------------------------------------------------------------- evaluation

def interpolate(study: CineStudy, spec: DownsampleSpec, method: str, model=None) -> CineStudy:
    if spec.K == 0:
        return study
    if method in ("linear", "flow"):
        return interpolate_series_baseline(study, spec, method)
    if model is None:
        raise ValueError(f"method {method} needs a trained model for K={spec.K}")
    return interpolate_series(model, study, spec)


def frame_reports(pred: CineStudy, gt: CineStudy, spec: DownsampleSpec) -> list[metrics.MetricReport]:
    """Metrics on the reconstructed frames (all frames when K = 0)."""
    missing = np.flatnonzero(~spec.kept(gt.meta.num_frames))
    frames = missing if missing.size else np.arange(gt.meta.num_frames)
    return [metrics.image_report(pred.magnitude[t], gt.magnitude[t], gt.seg[t], pred.seg[t])
            for t in frames]


def evaluate_interpolation(studies: list[CineStudy], K: int, method: str, model=None) -> dict:
    """Mean/std of every metric over the reconstructed frames of ``studies``."""
    spec = DownsampleSpec(K)
    reports = []
    for st in studies:
        pred = interpolate(drop_frames(st, spec), spec, method, model)
        reports.extend(frame_reports(pred, st, spec))
    return metrics.mean_report(reports)


def _curve_chart(path, syn: velocity.VelocityCurves, gt: velocity.VelocityCurves, title: str):
    t = list(range(syn.T))
    series = {}
    for d, short in zip(velocity.DIRECTIONS, ("vr", "vc", "vz")):
        series[f"{short} synth"] = (t, list(getattr(syn, d)))
        series[f"{short} truth"] = (t, list(getattr(gt, d)))
    write_line_chart(path, series, title=title, xlabel="frame", ylabel="velocity (mm/s)")


def _metric_rows(per_k: dict[int, dict]) -> list[list]:
    return [[K, m, agg[m]["mean"], agg[m]["std"]] for K, agg in per_k.items() for m in METRIC_KEYS]


def run_full_pipeline(cfg: PipelineConfig, out) -> dict:
    """downsample -> interpolate -> synthesize phases -> assess, for every K.

    Writes, under ``out``: the study directories of every stage, per-K metric
    reports, per-study curve CSV/SVG, ``image_metrics.csv`` (image metrics
    per K) and ``velocity_summary.json`` (velocity statistics per K). Returns
    the bundle that is also written to ``bundle.json``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = prepare_data(cfg, out)
    studies = load_split(paths)
    ckpt_root = out / "ckpt"
    phase_model = get_phase_model(cfg, studies, ckpt_root) if cfg.phase_source == "trained" else None

    per_k_metrics, summary = {}, {}
    for K in cfg.ks:
        spec = DownsampleSpec(K)
        model = None
        if K > 0 and cfg.method == "learned":
            model = get_interp_model(cfg, K, studies, ckpt_root)
            if model is None:
                raise StageFailure("train-interp", RuntimeError(f"no checkpoint for K={K}"))
        run = out / "runs" / f"K{K}"
        rep = out / "reports" / f"K{K}"
        reports, pearsons, syn_stats, gt_stats, per_study = [], [], [], [], {}
        for si, (path, gt) in enumerate(zip(paths["test"], studies["test"])):
            name = Path(path).name
            with stage("downsample"):
                save_study(drop_frames(gt, spec), run / name / "downsampled")
            with stage("interpolate"):
                down = load_study(run / name / "downsampled")
                save_study(interpolate(down, spec, cfg.method, model), run / name / "interpolated")
            with stage("synthesize"):
                interp = load_study(run / name / "interpolated")
                gen = phase_model if phase_model is not None else oracle_generator(gt)
                synth = synthesize_phases(gen, interp, cfg.noise, seed=cfg.seed * 1009 + si)
                save_study(synth, run / name / "synthesized")
            with stage("assess"):
                synth = load_study(run / name / "synthesized")
                c_syn, c_gt = velocity.global_curves(synth), velocity.global_curves(gt)
                cmp = velocity.compare_curves(c_syn, c_gt, cfg.systole_end)
                (rep / f"{name}_curves.csv").parent.mkdir(parents=True, exist_ok=True)
                (rep / f"{name}_curves.csv").write_text(c_syn.to_csv())
                _curve_chart(rep / f"{name}_curves.svg", c_syn, c_gt, f"{name}, K={K}")
                syn_stats.append(velocity.curves_stats(c_syn, cfg.systole_end))
                gt_stats.append(velocity.curves_stats(c_gt, cfg.systole_end))
                pearsons.append({d: cmp[d]["pearson"] for d in velocity.DIRECTIONS})
                fr = frame_reports(synth, gt, spec)
                reports.extend(fr)
                per_study[name] = {"frames": fr, "pearson": pearsons[-1], "velocity": cmp}
        with stage("report"):
            agg = metrics.mean_report(reports)
            per_k_metrics[K] = agg
            write_json(rep / "metrics.json", {"K": K, "aggregate": agg, "per_study": per_study})
            mean_r = {}
            for d in velocity.DIRECTIONS:
                vals = [p[d] for p in pearsons if p[d] is not None]
                mean_r[d] = float(np.mean(vals)) if vals else None
            summary[K] = {
                "synthesized": velocity.stats_table(syn_stats),
                "ground_truth": velocity.stats_table(gt_stats),
                "pearson": mean_r,
                "pearson_per_study": pearsons,
            }
    with stage("report"):
        write_csv(out / "image_metrics.csv", ["K", "metric", "mean", "std"], _metric_rows(per_k_metrics))
        write_json(out / "velocity_summary.json", summary)
        bundle = {
            "config": cfg.to_json(),
            "splits": {k: [Path(p).name for p in v] for k, v in paths.items()},
            "image_metrics": per_k_metrics,
            "velocity": {K: {"pearson": v["pearson"]} for K, v in summary.items()},
        }
        write_json(out / "bundle.json", bundle)
    return bundle


def mean_pearson(bundle: dict, K: int) -> float:
    vals = [v for v in bundle["velocity"][K]["pearson"].values() if v is not None]
    return float(np.mean(vals))


def ksweep_report(cfg: PipelineConfig, out) -> dict:
    """Every method at every K of ``cfg.sweep_ks`` on the test split.

    ``vn`` is the single-stream network, ``ours`` the two-stream one. A
    learned method without a checkpoint (and with training disabled) is
    skipped and listed under ``skipped``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = prepare_data(cfg, out)
    studies = load_split(paths)
    table, skipped = {}, []
    for method in cfg.sweep_methods:
        for K in cfg.sweep_ks:
            model = None
            if method in ("vn", "ours") and K > 0:
                model = get_interp_model(cfg, K, studies, out / "ckpt", multi_head=method == "ours")
                if model is None:
                    skipped.append({"method": method, "K": K, "reason": "missing checkpoint"})
                    log.warning("ksweep: %s K=%d skipped, missing checkpoint", method, K)
                    continue
            with stage("evaluate"):
                base = method if method in ("linear", "flow") else "learned"
                table[(method, K)] = evaluate_interpolation(studies["test"], K, base, model)
    with stage("report"):
        rows = [[m, K, key, agg[key]["mean"]] for (m, K), agg in table.items() for key in METRIC_KEYS]
        write_csv(out / "ksweep.csv", ["method", "K", "metric", "value"], rows)
        for key in METRIC_KEYS:
            series = {}
            for (m, K), agg in table.items():
                xs, ys = series.setdefault(m, ([], []))
                xs.append(K)
                ys.append(np.nan if agg[key]["mean"] is None else agg[key]["mean"])
            if series:
                write_line_chart(out / f"ksweep_{key}.svg", series, title=key.upper(),
                                 xlabel="K", ylabel=key)
        spearman = None
        lin = [(K, table[("linear", K)]["msew1"]["mean"]) for K in cfg.sweep_ks if ("linear", K) in table]
        if len(lin) >= 2:
            spearman = float(sstats.spearmanr([k for k, _ in lin], [v for _, v in lin]).statistic)
        report = {
            "rows": [{"method": m, "K": K, **{k: agg[k]["mean"] for k in METRIC_KEYS}}
                     for (m, K), agg in table.items()],
            "skipped": skipped,
            "linear_msew1_spearman": spearman,
        }
        write_json(out / "ksweep.json", report)
    return report


def gan_ablation(cfg: PipelineConfig, out) -> dict:
    """Two-stream interpolator trained with and without a patch-discriminator
    term (same seed, same data) at each K of ``cfg.gan_ks``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = prepare_data(cfg, out)
    studies = load_split(paths)
    rows = []
    for K in cfg.gan_ks:
        for variant, w in (("no_gan", 0.0), ("gan", cfg.gan_weight)):
            with stage("train-interp"):
                model = train_interp_model(cfg, K, studies["train"], studies["val"],
                                           adversarial_weight=w)
            with stage("evaluate"):
                agg = evaluate_interpolation(studies["test"], K, "learned", model)
            rows.append({"variant": variant, "K": K, **{k: agg[k]["mean"] for k in METRIC_KEYS}})
    with stage("report"):
        summary = {}
        for variant in ("no_gan", "gan"):
            vals = [r["msew1"] for r in rows if r["variant"] == variant]
            summary[variant] = {"mean_msew1": float(np.mean(vals))}
        report = {"rows": rows, "summary": summary, "gan_weight": cfg.gan_weight}
        write_csv(out / "gan_ablation.csv", ["variant", "K", *METRIC_KEYS],
                  [[r["variant"], r["K"], *[r[k] for k in METRIC_KEYS]] for r in rows])
        write_json(out / "gan_ablation.json", report)
    return report
