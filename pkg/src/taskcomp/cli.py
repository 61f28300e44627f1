"""Command-line operator surface.

Subcommands: linear, train, sweep, serve, send, export-plots.
Exit codes: 0 success, 1 experiment failure, 2 usage/config error.

Experiment configuration is a plain text document of ``key = value`` lines
('#' starts a comment).  Unknown keys are rejected; every run writes the
fully resolved configuration (defaults included) beside its outputs, and
the only nondeterministic output byte is the single ``timestamp`` field of
summary.json.
"""

import argparse
import json
import os
import socket
import sys
import threading
from datetime import datetime, timezone

import numpy as np

from .config import SCHEMES, TrainConfig
from .datagen import (
    CLASSIFICATION,
    TimeseriesWindowSpec,
    gen_cluster_classification,
    gen_gaussian_regression,
    gen_linear_task,
    gen_timeseries_windows,
)
from .errors import ConfigError, Diverged, MissingColumn, TaskcompError
from .linear import descend_linear, eval_linear_loss, solve_theorem1
from .training import (
    MetricsRow,
    eval_uncompressed,
    load_codesign,
    pretrain_task,
    read_metrics_csv,
    robot_share,
    save_codesign,
    summarize_dominance,
    sweep_bottleneck,
    train_codesign,
    train_split_codesign,
    write_metrics_csv,
)
from . import wire

# ---------------------------------------------------------------------------
# Experiment configuration document
# ---------------------------------------------------------------------------

def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _int_list(text):
    return [int(part) for part in parse_grid(text)]


def _float_list(text):
    return [float(part) for part in str(text).split(",") if part.strip() != ""]


def _str_list(text):
    return [part.strip() for part in str(text).split(",") if part.strip()]


# key -> (parser, default)
CONFIG_SCHEMA = {
    "task": (str, "cluster"),
    "n": (int, 16),
    "classes": (int, 4),
    "samples": (int, 2000),
    "separation": (float, 6.0),
    "window": (int, 16),
    "noise": (float, 1.0),
    "m": (int, 3),
    "rank": (int, 3),
    "hidden": (int, 64),
    "task_hidden": (int, 64),
    "scheme": (str, "tasknet"),
    "steps": (int, 3000),
    "learning_rate": (float, 0.05),
    "batch_size": (int, 64),
    "lambda": (float, 0.0),
    "z_dim": (int, 4),
    "seed": (int, 0),
    "eval_every": (int, 100),
    "clip_norm": (float, 10.0),
    "vae": (_bool, False),
    "use_dataset_labels": (_bool, False),
    "pretrain_steps": (int, 1500),
    "pretrain_lr": (float, 0.05),
    "z_grid": (_int_list, [1, 2, 4, 8, 16]),
    "lambda_grid": (_float_list, [0.0]),
    "schemes": (_str_list, ["tasknet", "task_agnostic"]),
    "split_index": (int, 0),
    "out": (str, "run_out"),
}


def parse_grid(text):
    """Integer grid: comma-separated entries, each a number or 'a..b' range."""
    values = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            values.extend(range(int(lo), int(hi) + 1))
        else:
            values.append(int(part))
    if not values:
        raise ConfigError(f"empty grid: {text!r}")
    return values


def parse_config_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser, _default = CONFIG_SCHEMA[key]
        try:
            values[key] = parser(value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return values


def load_experiment_config(path=None, overrides=None):
    cfg = {key: default for key, (_p, default) in CONFIG_SCHEMA.items()}
    if path is not None:
        with open(path) as f:
            cfg.update(parse_config_text(f.read()))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _default = CONFIG_SCHEMA[key]
        cfg[key] = parser(value) if isinstance(value, str) else value
    return cfg


def format_config_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(format_config_value(v) for v in value)
    return str(value)


def resolved_config_text(cfg):
    lines = [f"{key} = {format_config_value(cfg[key])}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"


def write_resolved_config(cfg, out_dir):
    with open(os.path.join(out_dir, "config_resolved.txt"), "w") as f:
        f.write(resolved_config_text(cfg))


def build_dataset(cfg):
    task = cfg["task"]
    if task == "cluster":
        return gen_cluster_classification(cfg["n"], cfg["classes"], cfg["samples"],
                                          cfg["separation"], cfg["seed"])
    if task == "timeseries":
        spec = TimeseriesWindowSpec(window=cfg["window"], noise=cfg["noise"],
                                    seed=cfg["seed"])
        return gen_timeseries_windows(spec, cfg["samples"])
    if task == "linear_map":
        k = gen_linear_task(cfg["n"], cfg["m"], cfg["rank"], cfg["seed"])
        return gen_gaussian_regression(k, cfg["samples"], cfg["seed"])
    raise ConfigError(f"unknown task {task!r}")


def train_config_from(cfg, **overrides):
    base = dict(
        steps=cfg["steps"], learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"], seed=cfg["seed"], lam=cfg["lambda"],
        z_dim=cfg["z_dim"], scheme=cfg["scheme"], hidden=cfg["hidden"],
        eval_every=cfg["eval_every"], clip_norm=cfg["clip_norm"],
        vae=cfg["vae"], use_dataset_labels=cfg["use_dataset_labels"],
    )
    base.update(overrides)
    return TrainConfig(**base)


def row_to_dict(row: MetricsRow):
    return {
        "scheme": row.scheme, "z_dim": row.z_dim, "lambda": row.lam,
        "step": row.step, "task_loss": row.task_loss,
        "recon_loss": row.recon_loss, "weighted_loss": row.weighted_loss,
        "accuracy": row.accuracy, "compression_ratio": row.compression_ratio,
    }


def write_summary(out_dir, payload):
    payload = dict(payload)
    payload["timestamp"] = datetime.now(timezone.utc).isoformat()
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_linear(args):
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    z_grid = parse_grid(args.z)
    lambda_grid = _float_list(args.lam)
    k = gen_linear_task(args.n, args.m, args.r, args.seed)
    eval_rng = np.random.default_rng([args.seed, 99])
    eval_batch = eval_rng.standard_normal((args.eval_samples, args.n))

    cfg_echo = {
        "task": "linear", "n": args.n, "m": args.m, "rank": args.r,
        "z_grid": z_grid, "lambda_grid": lambda_grid, "steps": args.steps,
        "learning_rate": args.lr, "batch_size": args.batch_size,
        "eval_samples": args.eval_samples, "seed": args.seed, "out": out_dir,
    }
    with open(os.path.join(out_dir, "config_resolved.txt"), "w") as f:
        f.write("\n".join(f"{k_} = {format_config_value(v)}"
                          for k_, v in sorted(cfg_echo.items())) + "\n")

    lines = ["method,z_dim,lambda,task_loss,recon_loss,weighted_loss"]
    failures = []

    def record(method, z, lam, report):
        lines.append(",".join([method, str(z), repr(float(lam)),
                               repr(report.task_loss), repr(report.recon_loss),
                               repr(report.weighted)]))

    base_cfg = TrainConfig(steps=args.steps, learning_rate=args.lr,
                           batch_size=args.batch_size, seed=args.seed,
                           z_dim=max(z_grid), scheme="tasknet")
    for z in z_grid:
        closed = solve_theorem1(k, z)
        record("closed_form", z, 0.0, eval_linear_loss(closed, eval_batch))
        for lam in lambda_grid:
            try:
                model, _trace = descend_linear(k, z, lam, base_cfg)
                record("descent", z, lam, eval_linear_loss(model, eval_batch))
            except Diverged as exc:
                failures.append(f"descent z={z} lambda={lam:g}: {exc}")
        try:
            model, _trace = descend_linear(k, z, 0.0, base_cfg, task_aware=False)
            record("recon_only", z, 0.0, eval_linear_loss(model, eval_batch))
        except Diverged as exc:
            failures.append(f"recon_only z={z}: {exc}")

    csv_path = os.path.join(out_dir, "linear_metrics.csv")
    with open(csv_path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")

    # Loss-vs-Z series, one per (method, lambda), ready for plotting.
    series_lines = ["series,z_dim,task_loss,recon_loss"]
    parsed = [ln.split(",") for ln in lines[1:]]
    labels = sorted({(p[0], p[2]) for p in parsed})
    for method, lam in labels:
        for p in sorted((q for q in parsed if q[0] == method and q[2] == lam),
                        key=lambda q: int(q[1])):
            series_lines.append(",".join(
                [f"{method}_lambda{float(lam):g}", p[1], p[3], p[4]]))
    with open(os.path.join(out_dir, "linear_series.csv"), "w", newline="") as f:
        f.write("\n".join(series_lines) + "\n")

    write_summary(out_dir, {"command": "linear", "config": cfg_echo,
                            "failures": failures})
    for failure in failures:
        print(f"cell failed: {failure}", file=sys.stderr)
    return 1 if failures else 0


def _prepare_run(args, require_out=True):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    cfg = load_experiment_config(args.config, overrides)
    out_dir = cfg["out"]
    if require_out:
        os.makedirs(out_dir, exist_ok=True)
    return cfg, out_dir


def _pretrained_task(cfg, data):
    return pretrain_task(data, hidden=cfg["task_hidden"], steps=cfg["pretrain_steps"],
                         learning_rate=cfg["pretrain_lr"], batch_size=cfg["batch_size"],
                         seed=cfg["seed"], clip_norm=cfg["clip_norm"])


def cmd_train(args):
    cfg, out_dir = _prepare_run(args)
    write_resolved_config(cfg, out_dir)
    data = build_dataset(cfg)
    task_net = _pretrained_task(cfg, data)
    tc = train_config_from(cfg)
    baseline = eval_uncompressed(task_net, data,
                                 use_dataset_labels=cfg["use_dataset_labels"])
    if cfg["split_index"]:
        model, trace = train_split_codesign(task_net, cfg["split_index"], data, tc)
    else:
        model, trace = train_codesign(task_net, data, tc)

    rows = [baseline] + trace
    write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))
    save_codesign(model, os.path.join(out_dir, "models"))
    summary = {
        "command": "train",
        "config": cfg,
        "baseline": row_to_dict(baseline),
        "final": row_to_dict(trace[-1]),
        "robot_parameter_share": robot_share(model),
    }
    write_summary(out_dir, summary)
    return 0


def cmd_sweep(args):
    cfg, out_dir = _prepare_run(args)
    write_resolved_config(cfg, out_dir)
    data = build_dataset(cfg)
    task_net = _pretrained_task(cfg, data)
    tc = train_config_from(cfg, scheme="tasknet", lam=0.0)
    rows, failures, models = sweep_bottleneck(
        task_net, data, cfg["z_grid"], cfg["lambda_grid"], tc,
        schemes=cfg["schemes"], split_index=cfg["split_index"])
    write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))
    for (scheme, z, lam), model in sorted(models.items()):
        save_codesign(model, os.path.join(
            out_dir, "models", f"{scheme}_z{z}_lambda{lam:g}"))

    summary = {"command": "sweep", "config": cfg, "failures": failures,
               "baseline": row_to_dict(rows[0])}
    if data.task_kind == CLASSIFICATION:
        summary["dominance"] = summarize_dominance(rows)
    write_summary(out_dir, summary)
    attempted = len(models) + len(failures)
    for failure in failures:
        print(f"cell failed: {failure}", file=sys.stderr)
    return 1 if attempted and len(failures) == attempted else 0


def cmd_serve(args):
    model = load_codesign(args.model)
    server = wire.serve_decoder(model, (args.host, args.port))
    host, port = server.address
    print(f"serving on {host}:{port}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_send(args):
    cfg, out_dir = _prepare_run(args, require_out=False)
    model = load_codesign(args.model)
    data = build_dataset(cfg)
    xs = data.test_inputs if args.split == "test" else data.train_inputs
    dtype = wire.DTYPE_F64 if args.dtype == "f64" else wire.DTYPE_F32
    try:
        predictions, report = wire.send_dataset(model, xs, (args.host, args.port),
                                                dtype=dtype)
    except (ConnectionError, socket.error, OSError) as exc:
        print(f"connection failed: {exc}", file=sys.stderr)
        return 1

    os.makedirs(out_dir, exist_ok=True)
    write_resolved_config(cfg, out_dir)
    header = "index," + ",".join(f"y{i}" for i in range(predictions.shape[1]))
    lines = [header]
    for i in range(predictions.shape[0]):
        lines.append(",".join([str(i)] + [repr(v) for v in predictions[i]]))
    with open(os.path.join(out_dir, "predictions.csv"), "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "bandwidth.json"), "w") as f:
        json.dump(report.as_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"sent {report.samples_sent} samples, "
          f"compression ratio {report.ratio:.3f}", flush=True)
    return 0


def _series_path(out_dir, stem):
    return os.path.join(out_dir, f"{stem}.csv")


def cmd_export_plots(args):
    rows = read_metrics_csv(args.csv)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    baseline = [r for r in rows if r.scheme == "uncompressed"]
    cells = {}
    for r in rows:
        if r.scheme == "uncompressed":
            continue
        key = (r.scheme, r.z_dim, r.lam)
        if key not in cells or r.step > cells[key].step:
            cells[key] = r
    if not cells and not baseline:
        raise MissingColumn("scheme")

    z_values = sorted({z for (_s, z, _l) in cells}) or [r.z_dim for r in baseline]

    def fmt(value):
        return "" if value is None else repr(float(value))

    written = []
    for scheme, lam in sorted({(s, l) for (s, _z, l) in cells}):
        stem = f"task_loss_vs_z__{scheme}__lambda{lam:g}"
        lines = ["z_dim,task_loss,recon_loss,accuracy"]
        for (s, z, l), r in sorted(cells.items(), key=lambda kv: kv[0][1]):
            if s == scheme and l == lam:
                lines.append(f"{z},{fmt(r.task_loss)},{fmt(r.recon_loss)},{fmt(r.accuracy)}")
        with open(_series_path(out_dir, stem), "w", newline="") as f:
            f.write("\n".join(lines) + "\n")
        written.append(stem)

    for scheme, z in sorted({(s, z) for (s, z, _l) in cells}):
        lams = sorted({l for (s, zz, l) in cells if s == scheme and zz == z})
        if len(lams) < 2:
            continue
        stem = f"task_loss_vs_lambda__{scheme}__z{z}"
        lines = ["lambda,task_loss,recon_loss,accuracy"]
        for lam in lams:
            r = cells[(scheme, z, lam)]
            lines.append(f"{repr(float(lam))},{fmt(r.task_loss)},{fmt(r.recon_loss)},{fmt(r.accuracy)}")
        with open(_series_path(out_dir, stem), "w", newline="") as f:
            f.write("\n".join(lines) + "\n")
        written.append(stem)

    if baseline:
        b = baseline[0]
        lines = ["z_dim,task_loss,accuracy"]
        for z in z_values:
            lines.append(f"{z},{fmt(b.task_loss)},{fmt(b.accuracy)}")
        with open(_series_path(out_dir, "baseline"), "w", newline="") as f:
            f.write("\n".join(lines) + "\n")
        written.append("baseline")

    if args.render:
        _render_plots(out_dir, cells, baseline, z_values)
    return 0


def _render_plots(out_dir, cells, baseline, z_values):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme, lam in sorted({(s, l) for (s, _z, l) in cells}):
        pts = sorted((z, r.task_loss) for (s, z, l), r in cells.items()
                     if s == scheme and l == lam)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"{scheme} lambda={lam:g}")
    if baseline:
        ax.axhline(baseline[0].task_loss, color="green", linestyle="--",
                   label="uncompressed")
    ax.set_xlabel("bottleneck Z")
    ax.set_ylabel("task loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "task_loss_vs_z.png"), dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="taskcomp",
        description="Task-aware bottleneck compression experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("linear", help="closed-form and descent runs on a linear task")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--r", type=int, default=3)
    p.add_argument("--z", default="1..6", help="Z grid, e.g. 1..6 or 1,2,4")
    p.add_argument("--lambda", dest="lam", default="0.0",
                   help="comma-separated reconstruction weights")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--eval-samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="linear_out")
    p.set_defaults(func=cmd_linear)

    for name, func in (("train", cmd_train), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"{name} per experiment config")
        p.add_argument("--config", default=None, help="experiment config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")
        p.set_defaults(func=func)

    p = sub.add_parser("serve", help="host decoder + task module on a socket")
    p.add_argument("--model", required=True, help="model bundle directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("send", help="stream a dataset through encoder + wire")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.set_defaults(func=cmd_send)

    p = sub.add_parser("export-plots", help="series files (and plots) from a metrics CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", default="plots_out")
    p.add_argument("--render", action="store_true",
                   help="also render PNGs (needs matplotlib)")
    p.set_defaults(func=cmd_export_plots)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingColumn as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TaskcompError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
