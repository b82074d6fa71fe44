"""Command-line entry point: gen, train, eval, ablate, schemes, report, replay."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError, NumericError, UsageError

log = logging.getLogger("pilotprune")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_FORMAT = 0, 2, 3, 4
OUT_ENV = "PILOTPRUNE_OUT"
LARGE_ELEMENTS = 4096  # N*M above this needs --allow-large
TRAIN_FILE, TEST_FILE = "train.mocd", "test.mocd"
CKPT_FILE = "model.mock"


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    args.out = str(path)
    return path


def parse_snr_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from exc
    if lo > hi:
        raise argparse.ArgumentTypeError(f"SNR range low end {lo} exceeds high end {hi}")
    return lo, hi


def parse_snr_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated dB values, got {text!r}") from exc


def write_manifest(out: Path, command: str, args, artifacts: dict):
    """Resolved configuration next to the outputs; no timestamps, so reruns match byte for byte."""
    config = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    doc = {
        "tool": "pilotprune",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "artifacts": {k: str(v) for k, v in sorted(artifacts.items())},
        "argv": _argv_from_config(command, config),
    }
    from .persist import atomic_write

    path = out / f"{command}.manifest.json"
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n").encode())
    return path


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _argv_from_config(command, config):
    argv = [command]
    for key, value in sorted(config.items()):
        if value is None or value is False or (key == "snr_db" and config.get("snr_range")):
            continue
        if key == "inputs":
            argv += [str(v) for v in value]
            continue
        flag = "--lambda" if key == "reg_lambda" else "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif key == "snr_range":
            argv.append(f"{flag}={value[0]}:{value[1]}")
        elif key == "snr_list":
            argv.append(f"{flag}=" + ",".join(str(v) for v in value))
        else:
            argv.append(f"{flag}={value}")
    return argv


def _check_size(n, m, allow_large, batch=64, width=32, k=0):
    if n * m <= LARGE_ELEMENTS:
        return
    estimate = k * n * m * 8 + batch * n * m * width * 4 * 12
    msg = f"N={n}, M={m} is a large grid; estimated memory {estimate / 2**30:.2f} GiB"
    if not allow_large:
        raise UsageError(msg + " (pass --allow-large to proceed)")
    print(msg, file=sys.stderr)


def _load_data(folder, name):
    from .persist import read_dataset

    path = Path(folder) / name
    if not path.exists():
        raise UsageError(f"missing dataset {path}; run 'gen' first")
    return read_dataset(path, split="train" if name == TRAIN_FILE else "test")


def _load_ckpt(path):
    from .persist import read_checkpoint

    if not Path(path).exists():
        raise UsageError(f"missing checkpoint {path}")
    return read_checkpoint(path)


def cmd_gen(args):
    from .channel import ChannelConfig, gaussian_dataset, generate_dataset
    from .persist import write_dataset

    if args.train_k < 1 or args.test_k < 1:
        raise UsageError(f"--train-k and --test-k must be >= 1, got {args.train_k}, {args.test_k}")
    cfg = ChannelConfig(args.antennas, args.subcarriers, args.paths, rng_seed=args.seed)
    _check_size(cfg.n_antennas, cfg.n_subcarriers, args.allow_large, k=args.train_k + args.test_k)
    make = gaussian_dataset if args.channel == "gaussian" else generate_dataset
    out = _out_dir(args)
    artifacts = {}
    for split, k, name in (("train", args.train_k, TRAIN_FILE), ("test", args.test_k, TEST_FILE)):
        write_dataset(make(cfg, k, split, args.seed), out / name)
        artifacts[split] = name
    write_manifest(out, "gen", args, artifacts)
    print(f"wrote {args.train_k} train / {args.test_k} test channels (N={cfg.n_antennas}, M={cfg.n_subcarriers}) to {out}")


def _train_config(args, n, m):
    from .model import ModelConfig
    from .pruning import PruneConfig
    from .training import TrainConfig

    mode = "dp" if args.mode == "dp-attn" else args.mode
    attention = args.mode == "dp-attn" or args.attention
    model = ModelConfig(n, m, args.pilot_len, mode=mode, attention=attention, conv_width=args.width,
                        linear_only=args.linear_only)
    if not 0.0 <= args.sparsity < 1.0:
        raise UsageError(f"--sparsity must be in [0, 1), got {args.sparsity}")
    prune = PruneConfig(args.sparsity, args.reg_lambda, args.steps) if args.sparsity > 0 else None
    return TrainConfig(model=model, steps=args.steps, batch=args.batch, snr_db=args.snr_db,
                       snr_range=args.snr_range, lr=args.lr, seed=args.seed, prune=prune)


def cmd_train(args):
    from .persist import atomic_write, export_mask, write_checkpoint
    from .training import train

    data = _load_data(args.data, TRAIN_FILE)
    n, m = data.samples.shape[1:]
    _check_size(n, m, args.allow_large, args.batch, args.width)
    config = _train_config(args, n, m)
    out = _out_dir(args)
    if args.checkpoint_every:
        config.checkpoint_every = args.checkpoint_every
        config.checkpoint_path = str(out / CKPT_FILE)
    result = train(data, config)
    write_checkpoint(result.graph, out / CKPT_FILE)
    lines = ["step,mse,reg_term,sparsity"]
    lines += [f"{r.step},{r.mse!r},{r.reg_term!r},{r.sparsity!r}" for r in result.trace]
    atomic_write(out / "loss.csv", ("\n".join(lines) + "\n").encode())
    export_mask(result.graph.mask, out / "mask.csv", out / "mask.pgm")
    write_manifest(out, "train", args, {"checkpoint": CKPT_FILE, "loss": "loss.csv",
                                        "mask_csv": "mask.csv", "mask_image": "mask.pgm"})
    last = result.trace[-1]
    print(f"trained {config.model.tag} for {config.steps} steps: final mse {last.mse:.4f}, "
          f"{result.graph.mask.n_zeros} pruned pilots")


def cmd_eval(args):
    from .baselines import ExtendedLmmseEstimator, LmmseEstimator, OracleEstimator, fft_pilots, full_stats, subcarrier_stats
    from .evaluation import EvalReport, SerConfig, evaluate_rows, measure_ser
    from .model import ModelEstimator

    if args.ckpt is None and args.estimator is None:
        raise UsageError("give --ckpt or --estimator")
    test = _load_data(args.data, TEST_FILE)
    n, m = test.samples.shape[1:]
    graph = _load_ckpt(args.ckpt) if args.ckpt else None
    if graph is not None and (graph.config.n_antennas, graph.config.n_subcarriers) != (n, m):
        raise UsageError(f"checkpoint dims ({graph.config.n_antennas}, {graph.config.n_subcarriers}) "
                         f"do not match dataset ({n}, {m})")
    mask = graph.mask.mask if graph is not None else np.ones((args.pilot_len, m), dtype=np.uint8)
    pilots = graph.pilots if graph is not None else fft_pilots(args.pilot_len, n, m)
    l = mask.shape[0]
    if args.estimator is None:
        estimator, tag = ModelEstimator(graph), graph.config.tag
    else:
        train_set = _load_data(args.data, TRAIN_FILE)
        if args.estimator == "lmmse":
            estimator = LmmseEstimator(pilots, subcarrier_stats(train_set), mask)
        else:
            estimator = ExtendedLmmseEstimator(pilots, full_stats(train_set), mask)
        tag = args.estimator
    if args.perfect_csi:
        estimator = OracleEstimator()
    n_active = int(mask.sum())
    entry = dict(scheme=args.scheme or tag, mode=graph.config.mode if graph else "fft", tag=tag,
                 estimator=estimator, graph=graph if args.estimator is None else None, L=l,
                 S=float((mask == 0).mean()))
    report = evaluate_rows(EvalReport(), [entry], test, args.snr_list, n_active, args.eval_seed)
    if args.ser:
        ser_cfg = SerConfig(grid_t=args.grid_t, n_symbols=args.symbols)
        for row in report.rows:
            noise_var = 0.0 if args.noiseless else None
            row.ser = measure_ser(estimator, test, ser_cfg, row.snr_db, mask, noise_var,
                                  args.eval_seed, perfect_csi=args.perfect_csi)
    out = _out_dir(args)
    report.write(out / "eval.csv")
    write_manifest(out, "eval", args, {"report": "eval.csv"})
    sys.stdout.write(report.to_csv())


def cmd_ablate(args):
    from .baselines import subcarrier_stats
    from .evaluation import EvalReport, run_ablation, run_sp_dp

    missing = [flag for flag, value in (("--nn-ckpt (train --mode dp-attn)", args.nn_ckpt),
                                        ("--fft-ckpt (train --mode fft --attention)", args.fft_ckpt))
               if value is None or not Path(value).exists()]
    if missing:
        raise UsageError("missing prerequisite checkpoints: " + ", ".join(missing))
    train_set, test = _load_data(args.data, TRAIN_FILE), _load_data(args.data, TEST_FILE)
    nn_graph, fft_graph = _load_ckpt(args.nn_ckpt), _load_ckpt(args.fft_ckpt)
    reports = [run_ablation(test, args.snr_list, nn_graph, fft_graph, subcarrier_stats(train_set),
                            args.eval_seed)]
    extra = {label: path for label, path in (("SP", args.sp_ckpt), ("DP", args.dp_ckpt)) if path}
    if extra:
        graphs = {label: _load_ckpt(path) for label, path in extra.items()}
        graphs["DP+Attention"] = nn_graph
        reports.append(run_sp_dp(test, args.snr_list, graphs, args.eval_seed))
    report = EvalReport.merge(reports)
    out = _out_dir(args)
    report.write(out / "ablation.csv")
    write_manifest(out, "ablate", args, {"report": "ablation.csv"})
    sys.stdout.write(report.to_csv())


def cmd_schemes(args):
    from .evaluation import SerConfig, run_pilot_schemes, scheme_specs, train_schemes
    from .persist import export_mask, write_checkpoint
    from .training import TrainConfig

    test = _load_data(args.data, TEST_FILE)
    n, m = test.samples.shape[1:]
    specs = scheme_specs(args.base_len, m)
    ckpt_dir = Path(args.ckpt_dir) if args.ckpt_dir else _out_dir(args)
    paths = {s.scheme: ckpt_dir / f"scheme_{s.scheme}.mock" for s in specs}
    absent = [sid for sid, p in paths.items() if not p.exists()]
    graphs = {sid: _load_ckpt(p) for sid, p in paths.items() if p.exists()}
    if absent:
        if not args.train:
            raise UsageError("missing scheme checkpoints " + ", ".join(str(paths[s]) for s in absent)
                             + "; rerun with --train to create them")
        from .model import ModelConfig

        template = TrainConfig(model=ModelConfig(n, m, args.base_len, conv_width=args.width),
                               steps=args.steps, batch=args.batch, snr_db=args.snr_db, seed=args.seed)
        trained = train_schemes(_load_data(args.data, TRAIN_FILE), args.base_len, template, only=absent,
                                reg_lambda=args.reg_lambda)
        for sid, graph in trained.items():
            write_checkpoint(graph, paths[sid])
        graphs.update(trained)
    graphs = {s.scheme: graphs[s.scheme] for s in specs}
    ser_cfg = SerConfig(grid_t=args.grid_t, n_symbols=args.symbols) if args.ser else None
    report = run_pilot_schemes(test, args.snr_db, args.base_len, graphs, ser_cfg, args.eval_seed)
    out = _out_dir(args)
    artifacts = {"report": "schemes.csv"}
    for sid, graph in graphs.items():
        export_mask(graph.mask, out / f"mask_{sid}.csv", out / f"mask_{sid}.pgm")
        artifacts[f"mask_{sid}"] = f"mask_{sid}.pgm"
    report.write(out / "schemes.csv")
    write_manifest(out, "schemes", args, artifacts)
    sys.stdout.write(report.to_csv())


def cmd_report(args):
    from .evaluation import EvalReport

    reports = []
    for path in args.inputs:
        if not Path(path).exists():
            raise UsageError(f"missing report {path}")
        reports.append(EvalReport.read(path))
    merged = EvalReport.merge(reports)
    out = _out_dir(args)
    merged.write(out / "report.csv")
    write_manifest(out, "report", args, {"report": "report.csv"})
    sys.stdout.write(merged.to_csv())


def cmd_replay(args):
    with open(args.manifest, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("tool") != "pilotprune" or "argv" not in doc:
        raise FormatError(f"{args.manifest} is not a run manifest")
    return main(doc["argv"])


def build_parser():
    p = argparse.ArgumentParser(prog="pilotprune", description="Learned pilots and channel estimation for MIMO-OFDM.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads; 1 is bit-reproducible")
        sp.add_argument("--verbose", action="store_true")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen", help="generate train/test channel datasets")
    g.add_argument("--antennas", type=int, default=8)
    g.add_argument("--subcarriers", type=int, default=32)
    g.add_argument("--paths", type=int, default=4)
    g.add_argument("--train-k", type=int, default=5000)
    g.add_argument("--test-k", type=int, default=500)
    g.add_argument("--channel", choices=("multipath", "gaussian"), default="multipath")
    g.add_argument("--allow-large", action="store_true")
    common(g)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a pilot/estimator network")
    t.add_argument("--data", required=True, help="directory holding train.mocd")
    t.add_argument("--mode", choices=("dp", "dp-attn", "sp", "fft"), default="dp")
    t.add_argument("--attention", action="store_true", help="add attention to sp/fft modes")
    t.add_argument("--linear-only", action="store_true")
    t.add_argument("--pilot-len", type=int, default=4)
    snr = t.add_mutually_exclusive_group()
    snr.add_argument("--snr-db", type=float, default=0.0)
    snr.add_argument("--snr-range", type=parse_snr_range)
    t.add_argument("--steps", type=int, default=20000)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--width", type=int, default=32, help="convolution channels")
    t.add_argument("--sparsity", type=float, default=0.0)
    t.add_argument("--lambda", dest="reg_lambda", type=float, default=1e-6)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--allow-large", action="store_true")
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="NMSE (and SER) of a checkpoint or closed-form estimator")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt")
    e.add_argument("--estimator", choices=("lmmse", "extended-lmmse"))
    e.add_argument("--pilot-len", type=int, default=4, help="DFT pilot length when no --ckpt is given")
    e.add_argument("--snr-list", type=parse_snr_list, default=[-5.0, 0.0, 5.0, 10.0])
    e.add_argument("--scheme")
    e.add_argument("--ser", action="store_true")
    e.add_argument("--grid-t", type=int, default=8)
    e.add_argument("--symbols", type=int, default=10**6)
    e.add_argument("--perfect-csi", action="store_true", help="use the true channel (debug)")
    e.add_argument("--noiseless", action="store_true", help="zero data-link noise for SER (debug)")
    e.add_argument("--eval-seed", type=int, default=2024)
    common(e, seed=False)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="four-way pilot/estimator ablation, optionally SP vs DP")
    a.add_argument("--data", required=True)
    a.add_argument("--nn-ckpt")
    a.add_argument("--fft-ckpt")
    a.add_argument("--sp-ckpt")
    a.add_argument("--dp-ckpt")
    a.add_argument("--snr-list", type=parse_snr_list, default=[-5.0, 0.0, 5.0, 10.0])
    a.add_argument("--eval-seed", type=int, default=2024)
    common(a, seed=False)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("schemes", help="pilot allocation schemes A-E at equal budget")
    s.add_argument("--data", required=True)
    s.add_argument("--base-len", type=int, default=3)
    s.add_argument("--snr-db", type=float, default=10.0)
    s.add_argument("--ckpt-dir")
    s.add_argument("--train", action="store_true", help="train missing scheme checkpoints")
    s.add_argument("--steps", type=int, default=20000)
    s.add_argument("--batch", type=int, default=64)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--lambda", dest="reg_lambda", type=float, default=1e-6)
    s.add_argument("--ser", action="store_true")
    s.add_argument("--grid-t", type=int, default=8)
    s.add_argument("--symbols", type=int, default=10**6)
    s.add_argument("--eval-seed", type=int, default=2024)
    common(s)
    s.set_defaults(func=cmd_schemes)

    r = sub.add_parser("report", help="merge report CSVs")
    r.add_argument("inputs", nargs="+")
    common(r, seed=False)
    r.set_defaults(func=cmd_report)

    rp = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    rp.add_argument("manifest")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=max(1, getattr(args, "threads", 1))):
            code = args.func(args)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
