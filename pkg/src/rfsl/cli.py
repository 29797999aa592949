"""Command-line front end.

Every subcommand reads the same configuration (defaults, then ``--config``,
then ``--set`` overrides, then ``--seed``), writes its files into ``--out``
and logs the resolved configuration. Failures print one line of the form
``error[<category>]: <detail>`` and exit with status 1.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import plotting
from .bounds import BoundConfig, accuracy_trials
from .config import ExperimentConfig, load_config
from .datastore import (
    read_checkpoint,
    read_dataset,
    read_graph,
    write_checkpoint,
    write_csv,
    write_dataset,
    write_graph,
)
from .dgcnn import Architecture, TrainConfig, evaluate, predict, train
from .diffraction import QuadratureConfig
from .errors import ParseError, RfslError
from .geometry import (
    SUBJECTS,
    MembershipConfig,
    NetworkGraph,
    build_perimeter_network,
    sample_targets,
    targets_array,
    wavelength_of,
)
from .multibody import NoiseConfig, simulate_dataset, simulate_rss, snapshot, AttenuationSnapshot
from .rss import estimate_attenuation, ingest_rss, read_rss_csv, records_from_powers, write_rss_csv

log = logging.getLogger("rfsl")

BOUNDS_COLUMNS = ["N", "accuracy", "n_hat_mean", "tau", "frequency_hz", "nodes", "area_sqm", "variant"]


def graph_from_config(cfg: ExperimentConfig) -> NetworkGraph:
    w, h = cfg["area.width"], cfg["area.height"]
    if cfg["network.nodes"] > 0:
        return build_perimeter_network(w, h, n_nodes=cfg["network.nodes"], node_height=cfg["network.height"])
    if cfg["network.spacing"] <= 0:
        raise ParseError("set network.nodes or network.spacing")
    return build_perimeter_network(w, h, spacing=cfg["network.spacing"], node_height=cfg["network.height"])


def _quad(cfg) -> QuadratureConfig:
    return QuadratureConfig(cfg["quadrature.step_fraction"], cfg["quadrature.max_elements"])


def _membership(cfg) -> MembershipConfig:
    return MembershipConfig(cfg["membership.threshold"], cfg["membership.samples"])


def _wavelength(cfg) -> float:
    return wavelength_of(cfg["radio.frequency"])


def _n_range(cfg, prefix: str) -> range:
    lo, hi = cfg[f"{prefix}.n_min"], cfg[f"{prefix}.n_max"]
    if hi < lo:
        raise ParseError(f"{prefix}.n_max must not be below {prefix}.n_min")
    return range(lo, hi + 1)


def _figures(args, cfg) -> bool:
    return cfg["figure.enabled"] and not args.no_figure


def bounds_rows(cfg: ExperimentConfig) -> list[list]:
    graph = graph_from_config(cfg)
    bcfg = BoundConfig(cfg["bounds.tau"], cfg["bounds.variant"])
    rows = []
    for n in _n_range(cfg, "bounds"):
        res = accuracy_trials(graph, n, SUBJECTS[cfg["subject.profile"]], bcfg, _wavelength(cfg),
                              cfg["bounds.trials"], cfg["seed"], _membership(cfg))
        log.info("N=%d accuracy=%.3f n_hat_mean=%.3f", n, res.accuracy, res.n_hat_mean)
        rows.append([n, res.accuracy, res.n_hat_mean, cfg["bounds.tau"], cfg["radio.frequency"], graph.n_nodes,
                     cfg["area.width"] * cfg["area.height"], cfg["bounds.variant"]])
    return rows


def cmd_bounds(args, cfg, out: Path):
    rows = bounds_rows(cfg)
    write_csv(out / "bounds.csv", BOUNDS_COLUMNS, rows, cfg.hash())
    if _figures(args, cfg):
        plotting.accuracy_curve(out / "bounds.png", [r[0] for r in rows], [r[1] for r in rows],
                                title=f"{cfg['area.width']:g} x {cfg['area.height']:g} m, {rows[0][5]} nodes")


def cmd_simulate(args, cfg, out: Path):
    graph = graph_from_config(cfg)
    lam = _wavelength(cfg)
    profile = SUBJECTS[cfg["subject.profile"]]
    noise = NoiseConfig(cfg["noise.sigma_db"], cfg["noise.enabled"])
    feats, labels, powers, scenes = [], [], [], []
    t = 0
    for n in _n_range(cfg, "data"):
        for i in range(cfg["data.samples_per_n"]):
            targets = sample_targets(n, graph.area, profile, [cfg["seed"], n, i])
            snap = snapshot(graph, targets, cfg["model.kind"], lam, _quad(cfg), _membership(cfg), t)
            rss = simulate_rss(snap, graph, cfg["rss.free_space_dbm"], noise, [cfg["seed"], n, i, 1])
            feats.append(snap.node_features)
            labels.append(n)
            powers.append(rss.link_power)
            scenes.append(targets)
            t += 1
    write_graph(graph, out / "graph.json")
    write_dataset(out / "snapshots.jsonl", graph, np.array(feats), labels, cfg["model.kind"], dict(cfg.values))
    write_rss_csv(out / "rss.csv", records_from_powers(graph, np.array(powers), cfg["rss.window_ms"]))
    if _figures(args, cfg) and scenes:
        plotting.scene(out / "scene.png", graph.node_positions, graph.area, targets_array(scenes[-1]))


def cmd_gen_data(args, cfg, out: Path):
    graph = graph_from_config(cfg)
    kind = cfg["model.kind"]
    feats, labels = simulate_dataset(graph, SUBJECTS[cfg["subject.profile"]], _n_range(cfg, "data"),
                                     cfg["data.samples_per_n"], _wavelength(cfg), cfg["seed"], _quad(cfg),
                                     _membership(cfg), (kind,))
    write_graph(graph, out / "graph.json")
    write_dataset(out / "dataset.jsonl", graph, feats[kind], labels, kind, dict(cfg.values))


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(cfg["train.learning_rate"], cfg["train.batch_size"], cfg["train.max_epochs"],
                       cfg["train.patience"], cfg["train.validation_fraction"], cfg["seed"])


def cmd_train(args, cfg, out: Path):
    if not args.data:
        raise ParseError("train needs --data")
    data = read_dataset(args.data).to_graph_dataset()
    v, f = data.features.shape[1:]
    arch = Architecture.for_iterations(cfg["train.iterations"], v, f, include_sort_key=cfg["train.include_sort_key"])
    params, history = train(data, _train_config(cfg), arch)
    write_checkpoint(params, out / "checkpoint.json")
    write_csv(out / "history.csv", ["epoch", "train_loss", "val_loss"], history.rows(), cfg.hash())
    if _figures(args, cfg):
        plotting.loss_curve(out / "history.png", history.epochs, history.train_loss, history.val_loss)


def cmd_eval(args, cfg, out: Path):
    if not args.data or not args.checkpoint:
        raise ParseError("eval needs --data and --checkpoint")
    params = read_checkpoint(args.checkpoint)
    data = read_dataset(args.data).to_graph_dataset()
    res = evaluate(params, data)
    rows = [[n, res.per_n[n], res.counts[n]] for n in sorted(res.per_n)]
    rows.append(["all", res.overall, len(data)])
    write_csv(out / "eval.csv", ["N", "accuracy", "samples"], rows, cfg.hash())
    pred = predict(params, data)
    write_csv(out / "predictions.csv", ["index", "label", "prediction"],
              [[i, int(y), int(p)] for i, (y, p) in enumerate(zip(data.labels, pred))], cfg.hash())
    if _figures(args, cfg):
        ns = sorted(res.per_n)
        plotting.accuracy_curve(out / "eval.png", ns, [res.per_n[n] for n in ns], threshold=None)


def cmd_ingest(args, cfg, out: Path):
    if not args.rss or not args.graph:
        raise ParseError("ingest needs --rss and --graph")
    graph = read_graph(args.graph)
    series = ingest_rss(read_rss_csv(args.rss), graph, cfg["rss.window_ms"])
    snaps: list[AttenuationSnapshot] = estimate_attenuation(series, cfg["rss.free_space_dbm"], graph,
                                                            cfg["rss.averaging_window"])
    shape = (0, graph.n_nodes, graph.max_degree)
    feats = np.stack([s.node_features for s in snaps]) if snaps else np.zeros(shape)
    raw = np.stack([s.raw_features for s in snaps]) if snaps else None
    stamps = [int(series.window_start_ms[s.timestamp]) for s in snaps]
    write_dataset(out / "measured.jsonl", graph, feats, [args.label] * len(snaps), "measured", dict(cfg.values),
                  stamps, raw)


def _parse_grid(text: str) -> list[tuple[str, list[str]]]:
    grid = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part:
            raise ParseError(f"sweep.grid entry {part!r}: expected key=v1,v2")
        key, values = part.split("=", 1)
        grid.append((key.strip(), [v.strip() for v in values.split(",") if v.strip()]))
    return grid


def _sweep_cell(cfg: ExperimentConfig) -> list[list]:
    return bounds_rows(cfg)


def cmd_sweep(args, cfg, out: Path):
    grid = _parse_grid(cfg["sweep.grid"])
    keys = [k for k, _ in grid]
    cells = [cfg.with_overrides(zip(keys, combo), "sweep.grid")
             for combo in itertools.product(*(vals for _, vals in grid))]
    if args.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    rows = []
    for cell, cell_rows in zip(cells, results):
        for r in cell_rows:
            rows.append([cell[k] for k in keys] + r)
    write_csv(out / "sweep.csv", keys + BOUNDS_COLUMNS, rows, cfg.hash())
    if _figures(args, cfg):
        curves = {}
        for cell, cell_rows in zip(cells, results):
            name = ", ".join(f"{k.split('.')[-1]}={cell[k]:g}" if isinstance(cell[k], float)
                             else f"{k.split('.')[-1]}={cell[k]}" for k in keys)
            curves[name] = ([r[0] for r in cell_rows], [r[1] for r in cell_rows])
        plotting.grouped_accuracy(out / "sweep.png", curves)


COMMANDS = {
    "simulate": cmd_simulate,
    "bounds": cmd_bounds,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ingest": cmd_ingest,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="base seed, overrides the configured one")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep cells")
    common.add_argument("--no-figure", action="store_true", help="skip PNG figures")

    parser = argparse.ArgumentParser(prog="rfsl", description="RF body-attenuation sensing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("train", "eval"):
            p.add_argument("--data", help="dataset file (JSON lines)")
        if name == "eval":
            p.add_argument("--checkpoint", help="trained model checkpoint")
        if name == "ingest":
            p.add_argument("--rss", help="RSS capture CSV")
            p.add_argument("--graph", help="graph document describing the capture network")
            p.add_argument("--label", type=int, default=-1, help="known target count, -1 if unknown")
    return parser


def _setup_logging():
    level = os.environ.get("RFSL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def run(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set) + ([f"seed={args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
        if args.jobs < 1:
            raise ParseError("--jobs must be at least 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        log.info("command %s, seed %d, config hash %s", args.command, cfg["seed"], cfg.hash())
        for line in cfg.canonical().splitlines():
            log.info("config %s", line)
        COMMANDS[args.command](args, cfg, out)
    except RfslError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        category = "io" if isinstance(exc, OSError) else "invalid-value"
        print(f"error[{category}]: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))
