"""Command line entry point: generate, train, estimate, register, evaluate, plot."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .estimator import EstimatorConfig
from .evaluation import (ESTIMATE_COLUMNS, ROW_COLUMNS, run_experiment, summary_rows, write_rows_csv,
                         write_summary_csv, _fmt)
from .oracle import OraclePredictor
from .patches import anchor_for, training_patches, save_patch_archive
from .phantoms import PRESETS, build_phantom, nominal_poses, validity_polygons
from .sampling import EVALUATION_SPECS, TRAINING_SPECS, generate_dataset, load_manifest, save_manifest, write_records_csv

CONFIG_VERSION = 1
log = logging.getLogger("xrpose")


def _anatomy_cache():
    cache = {}

    def get(rec):
        key = (rec.phantom, rec.phantom_seed)
        if key not in cache:
            cache[key] = build_phantom(rec.phantom_seed, rec.phantom)
        return cache[key]
    return get


def _usable(records, tau_limit=80.0):
    return [r for r in records if r.on_detector and abs(r.pose.tau) < tau_limit]


def cmd_generate(a):
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    phantom = build_phantom(a.phantom_seed, a.phantom)
    specs = TRAINING_SPECS if a.split == "train" else EVALUATION_SPECS
    records = generate_dataset(phantom, a.instrument, nominal_poses(a.phantom, a.instrument), specs, a.count,
                               validity_polygons(phantom), seed=a.seed, split=a.split, render=not a.no_render,
                               out_dir=out)
    save_manifest(records, out / "manifest.jsonl")
    write_records_csv(records, out / "records.csv")
    log.info("wrote %d records to %s", len(records), out)


def _epoch_log(row):
    log.info("epoch %d loss %.5f", row["epoch"], row["train_loss"])


def cmd_train(a):
    from .nn.convnet import ConvNetConfig, build_network, save_weights
    from .nn.train import TrainConfig, train

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    if a.task == "rectangle":
        from .nn.rectangle import run_head

        counts = (20000, 1000) if a.full_scale else (a.train_count, a.test_count)
        res = run_head(a.head, a.seed, *counts, epochs=a.epochs, channels=a.channels, fc_base=a.fc_base,
                       optimizer=a.optimizer, lr=a.lr, batch_size=a.batch_size, log=_epoch_log)
        net, tcfg, curve = res.net, res.train_config, res.curve
        with open(out / "test_errors.csv", "w") as fh:
            fh.write("sample,true_angle_deg,predicted_angle_deg,error_deg\n")
            for i, (t, p, e) in enumerate(zip(res.truth, res.predicted, res.errors)):
                fh.write(f"{i},{_fmt(t)},{_fmt(p)},{_fmt(e)}\n")
    else:
        if a.head != "indirect":
            raise SystemExit("patch training supports only the indirect head")
        records = _usable(load_manifest(Path(a.data) / "manifest.jsonl", load_images=True))
        rng = np.random.default_rng([a.seed, 29])
        xs, ys = [], []
        for rec in records:
            x, y = training_patches(rec.radiograph, rec.pose, a.patches_per_image, rng,
                                    anchor=anchor_for(rec.instrument))
            xs.append(x)
            ys.append(y)
        x, y = np.concatenate(xs), np.concatenate(ys)
        save_patch_archive(out / "patches", x, y)
        cfg = ConvNetConfig(start_channels=a.channels, fc_base=a.fc_base, outputs=12)
        net = build_network(cfg, a.seed)
        tcfg = TrainConfig(a.optimizer, a.lr, batch_size=a.batch_size, epochs=a.epochs, seed=a.seed)
        curve = train(net, x, y, tcfg, log=_epoch_log)
    save_weights(net, out / "weights", seed=a.seed, epoch=tcfg.epochs,
                 extra={"train": tcfg.to_dict(), "task": a.task, "head": a.head})
    with open(out / "loss_curve.csv", "w") as fh:
        fh.write("epoch,train_loss,batch_loss\n")
        for r in curve:
            fh.write(f"{r['epoch']},{_fmt(r['train_loss'])},{_fmt(r['batch_loss'])}\n")


def _predictor_factory(a):
    if a.predictor == "oracle":
        return lambda rec, rng: OraclePredictor(rec.pose, a.noise, rng, geom=rec.geom,
                                                deviation_gain=a.deviation_gain)
    from .nn.convnet import ConvNetPredictor, load_weights
    net, _ = load_weights(a.weights)
    pred = ConvNetPredictor(net)
    return lambda rec, rng: pred


def _experiment(a):
    records = load_manifest(Path(a.data) / "manifest.jsonl", load_images=True)
    if a.records:
        records = records[:a.records]
    kinds = {r.instrument for r in records}
    anchor = anchor_for(kinds.pop()) if len(kinds) == 1 else anchor_for("screw")
    cfg = EstimatorConfig(k_max=a.k_max, anchor=anchor)
    return run_experiment(records, _predictor_factory(a), cfg, a.trials, a.seed, label=a.label)


def cmd_estimate(a):
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    res = _experiment(a)
    write_rows_csv(res.rows, out / "estimates.csv", ESTIMATE_COLUMNS)


def cmd_evaluate(a):
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    res = _experiment(a)
    write_rows_csv(res.rows, out / "errors.csv", ROW_COLUMNS)
    write_summary_csv(summary_rows(res), out / "summary.csv",
                      {"excluded_tau": res.excluded_tau, "excluded_off_detector": res.excluded_off_detector,
                       "left_image": res.failed})


def cmd_register(a):
    from .registration import RegistrationConfig, registration_trials, trial_rows_csv

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    records = _usable(load_manifest(Path(a.data) / "manifest.jsonl", load_images=True))[:a.records]
    metrics = ("gc", "mi") if a.metric == "both" else (a.metric,)
    cfg = RegistrationConfig(metrics[0], a.budget, a.sigma0, a.scale_mm, a.scale_deg)
    rows = registration_trials(records, _anatomy_cache(), metrics, a.trials, a.seed, cfg)
    trial_rows_csv(rows, out / "registration.csv")


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def cmd_plot(a):
    from .plots import emit_plots

    groups: dict = {}
    for path in a.inputs:
        rows = _read_csv(path)
        if rows and "final_position_mm" in rows[0]:
            for r in rows:
                g = groups.setdefault(f"registration-{r['metric']}", {"position_mm": [], "forward_angle_deg": []})
                g["position_mm"].append(float(r["final_position_mm"]))
                g["forward_angle_deg"].append(float(r["final_forward_angle_deg"]))
        else:
            k = max(int(r["iteration"]) for r in rows)
            label = Path(path).stem if len(a.inputs) > 1 else "landmarks"
            groups[label] = {m: [float(r[m]) for r in rows if r["status"] == "ok" and int(r["iteration"]) == k]
                             for m in ("position_mm", "forward_angle_deg", "projection_angle_deg", "depth_mm")}
    for p in emit_plots(groups, a.out):
        log.info("wrote %s", p)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xrpose", description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--config", help="JSON file with per-command defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate")
    g.add_argument("--phantom", choices=PRESETS, default="perlin-bone")
    g.add_argument("--phantom-seed", type=int, default=0)
    g.add_argument("--instrument", choices=("screw", "drill", "robot"), default="screw")
    g.add_argument("--split", choices=("train", "test"), default="train")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--no-render", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train")
    t.add_argument("--task", choices=("rectangle", "patches"), default="rectangle")
    t.add_argument("--head", choices=("direct", "indirect"), default="indirect")
    t.add_argument("--data", help="dataset directory (patches task)")
    t.add_argument("--train-count", type=int, default=2000)
    t.add_argument("--test-count", type=int, default=500)
    t.add_argument("--full-scale", action="store_true", help="20000 train / 1000 test rectangles")
    t.add_argument("--patches-per-image", type=int, default=10)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--optimizer", choices=("adam", "sgd-nesterov"), default="adam")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--channels", type=int, default=8)
    t.add_argument("--fc-base", type=int, default=16)
    t.set_defaults(func=cmd_train)

    for name, fn in (("estimate", cmd_estimate), ("evaluate", cmd_evaluate)):
        e = sub.add_parser(name)
        e.add_argument("--data", required=True)
        e.add_argument("--predictor", choices=("oracle", "convnet"), default="oracle")
        e.add_argument("--weights")
        e.add_argument("--noise", type=float, default=0.0, help="oracle noise in pixels")
        e.add_argument("--deviation-gain", type=float, default=0.0)
        e.add_argument("--k-max", type=int, default=3)
        e.add_argument("--trials", type=int, default=1)
        e.add_argument("--records", type=int, default=0, help="use only the first N records")
        e.add_argument("--label", default="landmarks")
        e.set_defaults(func=fn)

    r = sub.add_parser("register")
    r.add_argument("--data", required=True)
    r.add_argument("--metric", choices=("gc", "mi", "both"), default="both")
    r.add_argument("--budget", type=int, default=400)
    r.add_argument("--trials", type=int, default=2)
    r.add_argument("--records", type=int, default=25)
    r.add_argument("--sigma0", type=float, default=1.0)
    r.add_argument("--scale-mm", type=float, default=1.0)
    r.add_argument("--scale-deg", type=float, default=5.0)
    r.set_defaults(func=cmd_register)

    pl = sub.add_parser("plot")
    pl.add_argument("inputs", nargs="+", help="errors.csv or registration.csv files")
    pl.set_defaults(func=cmd_plot)
    return p


def load_config(path) -> dict:
    cfg = json.loads(Path(path).read_text())
    if cfg.get("version") != CONFIG_VERSION:
        raise SystemExit(f"config version must be {CONFIG_VERSION}")
    return cfg


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = load_config(args.config)
        for action in parser._subparsers._group_actions:
            sp = action.choices[args.command]
            sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.get(args.command, {}).items()})
        parser.set_defaults(**{k: v for k, v in cfg.items() if k in ("seed", "out")})
        args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
