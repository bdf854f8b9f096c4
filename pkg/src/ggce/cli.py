"""Command-line front end: simulate, train, evaluate, render, ablate, gradcheck.

Every command reads one INI config, writes its artifacts into an output
directory (atomically, temp + rename), and echoes the config text into
the containers it produces so results stay self-describing. Exit codes:
0 ok, 2 config error, 3 data error, 4 numeric failure. Errors print a
single `error[kind]: message` line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import io
import os
import sys

import numpy as np

from .config import (
    KNOWN_METHOD_NAMES,
    ExperimentConfig,
    load_config,
    parse_config,
)
from .container import (
    CheckpointMeta,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
)
from .errors import ConfigError, DataFormatError, GgceError, NumericFailure
from .evaluate import evaluate_dataset, summarize_records
from .gaussmap import DeformerParams, init_from_measurements, random_scene
from .radio import ground_truth_spectrum
from .render import SelectionConfig, format_spectrum, render
from .scene import ChannelDataset, generate_dataset, summarize_dataset

METHOD_ALIASES = {"geogs": "trained"}

DATASET_FILE = "dataset.ggce"
CHECKPOINT_FILE = "checkpoint.ggce"
LOSS_FILE = "loss_history.csv"
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.csv"
ABLATION_FILE = "ablation.csv"


# ---------------------------------------------------------------------------
# shared plumbing


def _thread_cap() -> int | None:
    raw = os.environ.get("GGCE_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"GGCE_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("GGCE_THREADS must be at least 1")
    return n


def _cap_torch_threads():
    n = _thread_cap()
    if n is not None:
        import torch

        torch.set_num_threads(n)


def _load_effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        # rewrite the seed inside the text itself so the echoed config
        # still reparses to what actually ran
        cp = configparser.ConfigParser(
            inline_comment_prefixes=("#", ";"), interpolation=None
        )
        cp.read_string(cfg.raw_text)
        if not cp.has_section("run"):
            raise ConfigError("missing section [run]")
        cp["run"]["seed"] = str(int(args.seed))
        buf = io.StringIO()
        cp.write(buf)
        cfg = parse_config(buf.getvalue())
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> str:
    out = args.out if args.out else cfg.run.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _n_train(cfg: ExperimentConfig, ds: ChannelDataset) -> int:
    """Slots in the training prefix; the config's 0 means half the run."""
    n = cfg.run.train_slots
    if n == 0:
        n = (ds.n_slots + 1) // 2
    return min(n, ds.n_slots)


def _training_samples(ds: ChannelDataset, n_train: int):
    """One sample per training slot: position plus slot-mean power image."""
    positions, targets = [], []
    for slot in range(n_train):
        snaps = ds.slot_snapshots(slot)
        if not snaps:
            continue
        positions.append(snaps[0].ue_position)
        targets.append(
            np.mean([ground_truth_spectrum(s.cfr, ds.window) for s in snaps], axis=0)
        )
    if not positions:
        raise ConfigError("training split selected no slots")
    return np.array(positions), np.array(targets)


def _holdout(ds: ChannelDataset, n_train: int) -> ChannelDataset:
    """Snapshots after the training prefix; the whole run if none remain."""
    keep = [i for i, s in enumerate(ds.snapshots) if s.slot >= n_train]
    if not keep:
        return ds
    return ChannelDataset(
        grid=ds.grid,
        array=ds.array,
        pattern=ds.pattern,
        window=ds.window,
        snapshots=[ds.snapshots[i] for i in keep],
        paths=[ds.paths[i] for i in keep],
        config_text=ds.config_text,
    )


def _selection(cfg: ExperimentConfig) -> SelectionConfig:
    return SelectionConfig(
        threshold=cfg.estimator.selection_threshold, max_paths=cfg.estimator.max_paths
    )


def _init_scene(cfg, positions, targets, ds, random_init: bool):
    if random_init:
        return random_scene(positions, ds.array, k=cfg.k_init, seed=cfg.run.seed)
    return init_from_measurements(
        positions,
        targets,
        ds.grid,
        ds.window,
        ds.array,
        k_init=cfg.k_init,
        seed=cfg.run.seed,
    )


def _init_params(cfg, positions, ds) -> DeformerParams:
    span = np.concatenate([positions, [ds.array.bs_position]])
    extent = max(float(np.ptp(span, axis=0).max()), 50.0)
    return DeformerParams.initialize(
        eta_delay=2.0 * ds.grid.delay_resolution_s,
        center=positions.mean(axis=0),
        extent=extent,
        seed=cfg.run.seed,
    )


def _run_evaluation(cfg, ds, methods, scene, params, *, include_los=True, nearest_bin=False):
    internal = []
    for m in methods:
        name = METHOD_ALIASES.get(m, m)
        if name in internal:
            raise ConfigError(f"duplicate method {m!r}")
        internal.append(name)
    held = _holdout(ds, _n_train(cfg, ds))
    est = cfg.estimator
    records = evaluate_dataset(
        held,
        internal,
        scene=scene,
        params=params,
        seed=cfg.run.seed,
        eps_fraction=est.eps_fraction,
        alpha_window=est.alpha_window,
        selection=_selection(cfg),
        include_los=include_los,
        nearest_bin=nearest_bin,
        omp_max_iters=est.omp_max_iters,
        omp_tol=est.omp_tol,
    )
    rename = dict(zip(internal, methods))
    return [dataclasses.replace(r, method=rename[r.method]) for r in records]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _load_effective_config(args)
    out = _out_dir(args, cfg)
    workers = _thread_cap() or 1
    ds = generate_dataset(
        cfg.grid,
        cfg.array,
        cfg.window,
        cfg.pattern,
        cfg.scenario,
        config_text=cfg.raw_text,
        n_workers=workers,
    )
    path = os.path.join(out, DATASET_FILE)
    write_dataset(path, ds)
    print(f"wrote {path}")
    for key, value in summarize_dataset(ds).items():
        print(f"  {key}: {value}")
    return 0


def cmd_train(args) -> int:
    from .training import train_prior

    cfg = _load_effective_config(args)
    out = _out_dir(args, cfg)
    _cap_torch_threads()
    ds = read_dataset(args.dataset)
    positions, targets = _training_samples(ds, _n_train(cfg, ds))

    start_epoch = 0
    if args.checkpoint:
        ck = read_checkpoint(args.checkpoint)
        scene, params = ck.scene, ck.params
        start_epoch = ck.meta.epochs_completed
    else:
        scene = _init_scene(cfg, positions, targets, ds, random_init=False)
        params = _init_params(cfg, positions, ds)

    result = train_prior(
        positions, targets, scene, params, ds.grid, ds.window, ds.array, cfg.train
    )

    ck_path = os.path.join(out, CHECKPOINT_FILE)
    write_checkpoint(
        ck_path,
        result.scene,
        result.params,
        ds.grid,
        ds.window,
        ds.array,
        meta=CheckpointMeta(
            epochs_completed=start_epoch + cfg.train.epochs, seed=cfg.run.seed
        ),
        config_text=cfg.raw_text,
    )

    loss_path = os.path.join(out, LOSS_FILE)
    rows = [
        ",".join(
            [str(start_epoch + row["epoch"])]
            + [_fmt(row[k]) for k in ("spec", "marg", "support", "total")]
        )
        for row in result.history
    ]
    if start_epoch > 0 and os.path.exists(loss_path):
        with open(loss_path, encoding="utf-8") as fh:
            text = fh.read()
        if not text.endswith("\n"):
            text += "\n"
    else:
        text = "epoch,spec,marg,support,total\n"
    _write_text(loss_path, text + "".join(r + "\n" for r in rows))

    print(f"wrote {ck_path}")
    print(f"wrote {loss_path}")
    if result.history:
        first, last = result.history[0], result.history[-1]
        print(
            f"  loss: {first['total']:.6g} (epoch {start_epoch + first['epoch']}) -> "
            f"{last['total']:.6g} (epoch {start_epoch + last['epoch']})"
        )
    else:
        print("  no epochs run; checkpoint equals initialization")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_effective_config(args)
    out = _out_dir(args, cfg)
    _cap_torch_threads()
    ds = read_dataset(args.dataset)
    methods = (
        tuple(tok.strip() for tok in args.methods.split(",") if tok.strip())
        if args.methods
        else cfg.run.methods
    )
    if not methods:
        raise ConfigError("methods list is empty")
    for m in methods:
        if m not in KNOWN_METHOD_NAMES:
            raise ConfigError(
                f"unknown method {m!r}; choose from {KNOWN_METHOD_NAMES}"
            )

    scene = params = None
    if any(METHOD_ALIASES.get(m, m) == "trained" for m in methods):
        if not args.checkpoint:
            raise ConfigError("method 'geogs' needs --checkpoint")
        ck = read_checkpoint(args.checkpoint)
        scene, params = ck.scene, ck.params

    records = _run_evaluation(cfg, ds, methods, scene, params)

    lines = ["symbol,method,nmse_db,measured_flag"]
    for r in records:
        flag = 1 if r.source == "measured" else 0
        lines.append(f"{r.symbol},{r.method},{_fmt(r.nmse_db)},{flag}")
    metrics_path = os.path.join(out, METRICS_FILE)
    _write_text(metrics_path, "".join(line + "\n" for line in lines))

    summary = summarize_records(records)
    slines = ["method,mean_nmse_db,median_nmse_db,count"]
    for m in methods:
        s = summary[m]
        slines.append(
            f"{m},{_fmt(s['mean_nmse_db'])},{_fmt(s['median_nmse_db'])},{s['count']}"
        )
    summary_path = os.path.join(out, SUMMARY_FILE)
    _write_text(summary_path, "".join(line + "\n" for line in slines))

    print(f"wrote {metrics_path}")
    print(f"wrote {summary_path}")
    print(f"  {'method':10s} {'mean dB':>10s} {'median dB':>10s} {'n':>6s}")
    for m in methods:
        s = summary[m]
        print(
            f"  {m:10s} {s['mean_nmse_db']:10.2f} "
            f"{s['median_nmse_db']:10.2f} {s['count']:6d}"
        )
    return 0


def cmd_render(args) -> int:
    ck = read_checkpoint(args.checkpoint)
    try:
        coords = [float(tok) for tok in args.position.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --position {args.position!r}: {exc}") from exc
    if len(coords) != 3:
        raise ConfigError('--position needs three comma-separated values "x,y,z"')
    position = np.array(coords)

    selection = None
    out_default = "out"
    if args.config:
        cfg = load_config(args.config)
        selection = _selection(cfg)
        out_default = cfg.run.out_dir

    out = args.out or out_default
    os.makedirs(out, exist_ok=True)
    spectrum = render(
        ck.scene, ck.params, position, ck.grid, ck.array, ck.window, selection
    ).total
    spec_path = os.path.join(out, "spectrum.txt")
    _write_text(spec_path, format_spectrum(spectrum))
    print(f"wrote {spec_path}")

    if args.dataset:
        ds = read_dataset(args.dataset)
        track = np.array([s.ue_position for s in ds.snapshots])
        lo, hi = track.min(axis=0) - 1.0, track.max(axis=0) + 1.0
        if np.any(position < lo) or np.any(position > hi):
            print(
                "warning: position lies outside the simulated track extent; "
                "rendering anyway",
                file=sys.stderr,
            )
        nearest = int(
            np.argmin(np.linalg.norm(track - position[None, :], axis=1))
        )
        gt = ground_truth_spectrum(ds.snapshots[nearest].cfr, ds.window)
        gt_path = os.path.join(out, "spectrum_true.txt")
        _write_text(gt_path, format_spectrum(gt))
        print(f"wrote {gt_path} (snapshot {nearest})")
    return 0


ABLATION_VARIANTS = (
    # name, random_init, include_los, one_hot
    ("full", False, True, False),
    ("no_los", False, False, False),
    ("no_init_no_los", True, False, False),
    ("one_hot_kernel", False, True, True),
)


def cmd_ablate(args) -> int:
    from .training import train_prior

    cfg = _load_effective_config(args)
    out = _out_dir(args, cfg)
    _cap_torch_threads()
    ds = read_dataset(args.dataset)
    positions, targets = _training_samples(ds, _n_train(cfg, ds))

    lines = ["variant,mean_nmse_db,median_nmse_db,count"]
    print(f"  {'variant':16s} {'mean dB':>10s} {'median dB':>10s} {'n':>6s}")
    for name, random_init, include_los, one_hot in ABLATION_VARIANTS:
        scene = _init_scene(cfg, positions, targets, ds, random_init=random_init)
        params = _init_params(cfg, positions, ds)
        result = train_prior(
            positions,
            targets,
            scene,
            params,
            ds.grid,
            ds.window,
            ds.array,
            cfg.train,
            include_los=include_los,
            one_hot=one_hot,
        )
        records = _run_evaluation(
            cfg,
            ds,
            ["trained"],
            result.scene,
            result.params,
            include_los=include_los,
            nearest_bin=one_hot,
        )
        s = summarize_records(records)["trained"]
        lines.append(
            f"{name},{_fmt(s['mean_nmse_db'])},{_fmt(s['median_nmse_db'])},{s['count']}"
        )
        print(
            f"  {name:16s} {s['mean_nmse_db']:10.2f} "
            f"{s['median_nmse_db']:10.2f} {s['count']:6d}"
        )

    path = os.path.join(out, ABLATION_FILE)
    _write_text(path, "".join(line + "\n" for line in lines))
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .training import gradient_check

    cfg = _load_effective_config(args)
    _cap_torch_threads()
    rng = np.random.default_rng(cfg.run.seed)
    track = cfg.scenario.trajectory
    positions = np.array([track.position_at(t) for t in (0.0, 1.0, 2.0)])
    scene = random_scene(positions, cfg.array, k=3, seed=cfg.run.seed)

    span = np.concatenate([positions, [cfg.array.bs_position]])
    extent = max(float(np.ptp(span, axis=0).max()), 50.0)
    params = DeformerParams.initialize(
        eta_delay=2.0 * cfg.grid.delay_resolution_s,
        center=positions.mean(axis=0),
        extent=extent,
        seed=cfg.run.seed,
    )
    # a zero final layer would zero out every deformer gradient and make
    # the comparison vacuous for that group
    weights = [w.copy() for w in params.weights]
    weights[4] = rng.normal(scale=0.1, size=weights[4].shape)
    params = DeformerParams(
        weights=weights,
        eta_opacity=params.eta_opacity,
        eta_delay=params.eta_delay,
        eta_gain=params.eta_gain,
        center=params.center,
        extent=params.extent,
    )
    target = rng.uniform(0.0, 1.0, size=(cfg.window.n_taps, cfg.array.n_antennas))
    report = gradient_check(
        scene,
        params,
        positions[0],
        target,
        cfg.grid,
        cfg.window,
        cfg.array,
        seed=cfg.run.seed,
    )
    print(report)
    if not report.passed:
        raise NumericFailure("gradient check failed")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="ggce",
        description="Geometry-conditioned delay-beam priors for OFDM channel estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, *, dataset=False, checkpoint=False, methods=False, position=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name != "render", help="experiment INI file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        if dataset:
            p.add_argument(
                "--dataset",
                required=name in ("train", "evaluate", "ablate"),
                help="dataset container path",
            )
        if checkpoint:
            p.add_argument(
                "--checkpoint",
                required=name == "render",
                help="checkpoint container path",
            )
        if methods:
            p.add_argument("--methods", default=None, help="comma-separated method list")
        if position:
            p.add_argument("--position", required=True, help='UE position "x,y,z"')
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "generate a channel dataset")
    add("train", cmd_train, "fit the scene prior on the training slots",
        dataset=True, checkpoint=True)
    add("evaluate", cmd_evaluate, "score estimation methods on held-out slots",
        dataset=True, checkpoint=True, methods=True)
    add("render", cmd_render, "dump the rendered spectrum at a position",
        dataset=True, checkpoint=True, position=True)
    add("ablate", cmd_ablate, "train and score the four prior variants",
        dataset=True)
    add("gradcheck", cmd_gradcheck, "verify training gradients against finite differences")
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, 2)
    except DataFormatError as exc:
        return _fail("data", exc, 3)
    except NumericFailure as exc:
        return _fail("numeric", exc, 4)
    except OSError as exc:
        return _fail("data", exc, 3)
    except GgceError as exc:
        return _fail("numeric", exc, 4)


def _fail(kind: str, exc: Exception, code: int) -> int:
    message = " ".join(str(exc).split())
    print(f"error[{kind}]: {message}", file=sys.stderr)
    return code
