"""Command-line entry point: ``mvmtwin <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics, pipeline, velocity
from .core import CorruptStudyError, DownsampleSpec, drop_frames, load_study, save_study
from .phantom import generate_phantom, jitter_params
from .phase import PhaseModel, build_phase_dataset, synthesize_phases, train_phase
from .pipeline import ConfigError, PipelineConfig, StageFailure, stage, write_json
from .svg import write_line_chart
from .temporal import InterpModel
from .toy import run_toy_comparison

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _config(args) -> PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _study_dirs(path) -> list[Path]:
    """``path`` itself if it is a study, else its study subdirectories."""
    path = Path(path)
    if (path / "meta.json").is_file():
        return [path]
    dirs = sorted(p for p in path.iterdir() if (p / "meta.json").is_file()) if path.is_dir() else []
    if not dirs:
        raise ConfigError(f"no study directories under {path}")
    return dirs


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError(f"{args.command} needs {', '.join(missing)}")


def cmd_phantom_gen(args, cfg):
    _need(args, "out")
    base = cfg.phantom if args.seed is None else replace(cfg.phantom, seed=args.seed)
    with stage("phantom-gen"):
        for i in range(args.count):
            p = jitter_params(base, base.seed + i) if args.jitter else replace(base, seed=base.seed + i)
            save_study(generate_phantom(p), Path(args.out) / f"phantom-{p.seed}")


def _train_val(args, cfg):
    dirs = _study_dirs(args.data)
    if cfg.split is not None:
        by_name = {d.name: d for d in dirs}
        try:
            train = [by_name[n] for n in cfg.split.train]
            val = [by_name[n] for n in cfg.split.val]
        except KeyError as exc:
            raise ConfigError(f"split names a missing study: {exc}") from exc
    else:
        train, val = dirs, []
    with stage("data"):
        return [load_study(d) for d in train], [load_study(d) for d in val]


def cmd_train_interp(args, cfg):
    _need(args, "data", "k", "out")
    if args.k < 1:
        raise ConfigError("--k must be >= 1 for training")
    train, val = _train_val(args, cfg)
    with stage("train-interp"):
        model = pipeline.train_interp_model(cfg, args.k, train, val, multi_head=not args.single_head)
        model.save(args.out)


def cmd_infer_interp(args, cfg):
    _need(args, "input", "k", "out")
    with stage("data"):
        study = load_study(args.input)
    spec = DownsampleSpec(args.k)
    if study.present_frames().all() and args.k > 0:
        study = drop_frames(study, spec)
    model = None
    if args.method == "learned" and args.k > 0:
        _need(args, "ckpt")
        with stage("load-interp"):
            model = InterpModel.load(args.ckpt)
    with stage("interpolate"):
        save_study(pipeline.interpolate(study, spec, args.method, model), args.out)


def cmd_train_phase(args, cfg):
    _need(args, "data", "out")
    train, val = _train_val(args, cfg)
    net_cfg = replace(cfg.phase_net, composite=False) if args.no_composite else cfg.phase_net
    with stage("train-phase"):
        model = train_phase(build_phase_dataset(train), net_cfg, replace(cfg.phase_train, seed=cfg.seed),
                            build_phase_dataset(val) if val else None, cfg.noise)
        model.save(args.out)


def cmd_infer_phase(args, cfg):
    _need(args, "ckpt", "input", "out")
    with stage("load-phase"):
        model = PhaseModel.load(args.ckpt)
    with stage("data"):
        study = load_study(args.input)
    with stage("synthesize"):
        composite = False if args.no_composite else None
        seed = cfg.seed if args.seed is None else args.seed
        save_study(synthesize_phases(model, study, cfg.noise, seed, composite), args.out)


def cmd_assess(args, cfg):
    _need(args, "input", "out")
    with stage("data"):
        study = load_study(args.input)
    with stage("assess"):
        curves = velocity.global_curves(study)
        se = args.systole_end if args.systole_end is not None else cfg.systole_end
        stats = velocity.curves_stats(curves, se)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(curves.to_csv())
        write_json(args.stats or out.with_suffix(".stats.json"),
                   {d: s.to_json() for d, s in stats.items()})
        if args.svg:
            t = list(range(curves.T))
            write_line_chart(args.svg, {
                "radial": (t, list(curves.radial)),
                "circumferential": (t, list(curves.circumferential)),
                "longitudinal": (t, list(curves.longitudinal)),
            }, title=study.meta.subject_id, xlabel="frame", ylabel="velocity (mm/s)")


def cmd_metrics(args, cfg):
    _need(args, "pred", "gt", "out")
    preds, gts = _study_dirs(args.pred), _study_dirs(args.gt)
    if len(preds) == 1 and len(gts) == 1:
        pairs = [(preds[0], gts[0])]
    else:
        gt_by = {d.name: d for d in gts}
        missing = [p.name for p in preds if p.name not in gt_by]
        if missing:
            raise ConfigError(f"no ground truth for {missing}")
        pairs = [(p, gt_by[p.name]) for p in preds]
    per_study, all_reports = {}, []
    with stage("metrics"):
        for p, g in pairs:
            pred, gt = load_study(p), load_study(g)
            spec = DownsampleSpec(args.k if args.k is not None else 0)
            reports = pipeline.frame_reports(pred, gt, spec)
            all_reports.extend(reports)
            per_study[p.name] = metrics.mean_report(reports)
        write_json(args.out, {"per_study": per_study, "aggregate": metrics.mean_report(all_reports)})


def cmd_ksweep(args, cfg):
    _need(args, "out")
    pipeline.ksweep_report(cfg, args.out)


def cmd_gan_ablation(args, cfg):
    _need(args, "out")
    pipeline.gan_ablation(cfg, args.out)


def cmd_toy_exp(args, cfg):
    _need(args, "out")
    toy = cfg.toy if args.seed is None else replace(cfg.toy, seed=args.seed)
    with stage("toy-exp"):
        write_json(args.out, run_toy_comparison(args.task, toy))


def cmd_pipeline(args, cfg):
    _need(args, "out")
    if args.method:
        cfg = replace(cfg, method=args.method)
    pipeline.run_full_pipeline(cfg, args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mvmtwin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, **kw):
        sp = sub.add_parser(name, parents=[common], **kw)
        sp.set_defaults(func=func)
        return sp

    sp = add("phantom-gen", cmd_phantom_gen, help="write N phantom studies")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--no-jitter", dest="jitter", action="store_false")

    sp = add("train-interp", cmd_train_interp, help="train a temporal interpolator for one K")
    sp.add_argument("--data")
    sp.add_argument("--k", type=int)
    sp.add_argument("--single-head", action="store_true")

    sp = add("infer-interp", cmd_infer_interp, help="fill the missing frames of a study")
    sp.add_argument("--ckpt")
    sp.add_argument("--in", dest="input")
    sp.add_argument("--k", type=int)
    sp.add_argument("--method", choices=pipeline.METHODS, default="learned")

    sp = add("train-phase", cmd_train_phase, help="train the phase generator")
    sp.add_argument("--data")
    sp.add_argument("--no-composite", action="store_true")

    sp = add("infer-phase", cmd_infer_phase, help="synthesize the phases of a study")
    sp.add_argument("--ckpt")
    sp.add_argument("--in", dest="input")
    sp.add_argument("--no-composite", action="store_true")

    sp = add("assess", cmd_assess, help="global velocity curves and statistics")
    sp.add_argument("--in", dest="input")
    sp.add_argument("--systole-end", type=int)
    sp.add_argument("--stats", help="stats JSON path (default: <out>.stats.json)")
    sp.add_argument("--svg")

    sp = add("metrics", cmd_metrics, help="image metrics of predicted vs reference studies")
    sp.add_argument("--pred")
    sp.add_argument("--gt")
    sp.add_argument("--k", type=int, help="score only the frames a K-downsampling removes")

    add("ksweep", cmd_ksweep, help="all interpolation methods over K")
    add("gan-ablation", cmd_gan_ablation, help="interpolator with and without adversarial loss")

    sp = add("toy-exp", cmd_toy_exp, help="plain vs adversarial loss on synthetic circles")
    sp.add_argument("--task", choices=("shape", "texture"), default="shape")

    sp = add("pipeline", cmd_pipeline, help="run every stage for every K")
    sp.add_argument("--method", choices=pipeline.METHODS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageFailure, CorruptStudyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if getattr(exc, "diagnostics", None):
            print(f"diagnostics: {exc.diagnostics}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
