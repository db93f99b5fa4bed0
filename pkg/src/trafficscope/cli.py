"""Command-line pipeline orchestrator.

Subcommands cover the full chain (synth, ingest, affectedness, event-impact,
tas, train, predict, deps, snapshot, serve), plus `all` to run everything,
`report` for CSV/figure rendering, and `--print-config` for the effective
configuration. Logs go to stderr; machine-readable manifests land in the data
directory. Exit codes: 0 ok, 2 missing/invalid input, 1 other failures.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import signal
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, PipelineConfig
from .graph import GraphError
from .impact import SubgraphParams
from .ingest import IngestError
from .ioutil import read_json
from .snapshot import SnapshotError
from .structdeps import DependencyParams
from .synth import SynthConfig, SynthConfigError

log = logging.getLogger("trafficscope")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", default="data", help="artifact directory (default: ./data)")
    parser.add_argument("--config", help="pipeline config JSON; flags override file values")
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trafficscope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic scenario")
    _add_common(p)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("ingest", help="validate and normalize the input files")
    _add_common(p)
    p.add_argument("--graph")
    p.add_argument("--traffic")
    p.add_argument("--events")
    p.add_argument("--lenient", action="store_true", help="skip and count malformed rows instead of failing")

    p = sub.add_parser("affectedness", help="build the outlier profile and classify affected bins")
    _add_common(p)
    p.add_argument("--min-samples", type=int)
    p.add_argument("--train-from", help="YYYY-MM-DD inclusive")
    p.add_argument("--train-to", help="YYYY-MM-DD inclusive")

    p = sub.add_parser("event-impact", help="derive per-event subgraphs, radii and delay curves")
    _add_common(p)
    p.add_argument("--max-radius", type=float, dest="max_radius_m")
    p.add_argument("--seed-radius", type=float, dest="seed_radius_m")
    p.add_argument("--tau", type=float)
    p.add_argument("--as-of", help="ISO timestamp separating historical and future events")

    p = sub.add_parser("tas", help="re-derive typically affected subgraphs at a threshold")
    _add_common(p)
    p.add_argument("--tau", type=float)

    p = sub.add_parser("train", help="fit the impact predictor from historical records")
    _add_common(p)
    p.add_argument("-k", type=int, dest="knn_k")

    p = sub.add_parser("predict", help="predict impact for future events")
    _add_common(p)
    p.add_argument("--model", help="model file (default <data-dir>/model.json)")
    p.add_argument("--events", help="events file (default from config)")
    p.add_argument("--as-of")

    p = sub.add_parser("deps", help="detect structurally dependent subgraphs")
    _add_common(p)
    p.add_argument("--theta-overlap", type=float)
    p.add_argument("--delta0", type=float)
    p.add_argument("--d-max", type=float)
    p.add_argument("--score-min", type=float)

    p = sub.add_parser("snapshot", help="bundle all layers into snapshot.json")
    _add_common(p)
    p.add_argument("--as-of")

    p = sub.add_parser("serve", help="serve the snapshot over HTTP")
    _add_common(p)
    p.add_argument("--bind", default="127.0.0.1:8008")
    p.add_argument("--reload-signal", action="store_true",
                   help="reload snapshot.json from the data dir on SIGHUP")
    p.add_argument("--ui-dir", help="serve a static frontend from this directory at /")

    p = sub.add_parser("all", help="run the full pipeline (synthetic scenario by default)")
    _add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-synth", action="store_true", help="start from existing input files")

    p = sub.add_parser("report", help="render CSV summaries and figures from artifacts")
    _add_common(p)
    p.add_argument("--out", help="report directory (default <data-dir>/report)")

    return parser


def _date(value: str | None) -> dt.date | None:
    return dt.date.fromisoformat(value) if value else None


def _datetime(value: str | None) -> dt.datetime | None:
    return dt.datetime.fromisoformat(value) if value else None


def effective_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"missing input file: {path}")
        cfg = PipelineConfig.from_dict(read_json(path))
    else:
        cfg = PipelineConfig()

    updates: dict = {}
    for attr, key in (("graph", "graph_path"), ("traffic", "traffic_path"), ("events", "events_path")):
        value = getattr(args, attr, None)
        if value:
            updates[key] = value
    if getattr(args, "lenient", False):
        updates["lenient"] = True
    if getattr(args, "min_samples", None) is not None:
        updates["min_samples"] = args.min_samples
    if getattr(args, "train_from", None):
        updates["train_from"] = _date(args.train_from)
    if getattr(args, "train_to", None):
        updates["train_to"] = _date(args.train_to)
    if getattr(args, "tau", None) is not None:
        updates["tau"] = args.tau
    if getattr(args, "knn_k", None) is not None:
        updates["knn_k"] = args.knn_k
    if getattr(args, "as_of", None):
        updates["as_of"] = _datetime(args.as_of)
    if getattr(args, "seed", None) is not None:
        updates["synth"] = replace(cfg.synth, seed=args.seed)

    subgraph_updates = {
        key: getattr(args, key)
        for key in ("max_radius_m", "seed_radius_m")
        if getattr(args, key, None) is not None
    }
    if subgraph_updates:
        updates["subgraph"] = replace(cfg.subgraph, **subgraph_updates)

    if getattr(args, "theta_overlap", None) is not None:
        updates["theta_overlap"] = args.theta_overlap
    deps_updates = {}
    if getattr(args, "delta0", None) is not None:
        deps_updates["delta0_m"] = args.delta0
    if getattr(args, "d_max", None) is not None:
        deps_updates["d_max_m"] = args.d_max
    if getattr(args, "score_min", None) is not None:
        deps_updates["score_min"] = args.score_min
    if deps_updates:
        updates["deps"] = replace(cfg.deps, **deps_updates)

    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def _serve(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    import uvicorn

    from . import pipeline, service

    data_dir = Path(args.data_dir)
    snap = pipeline.load_snapshot(data_dir)
    app = service.create_app(snap)

    if args.ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.ui_dir, html=True), name="ui")

    if args.reload_signal:
        def _reload(_signum, _frame):
            try:
                service.swap_snapshot(app, pipeline.load_snapshot(data_dir))
                log.info("snapshot reloaded")
            except Exception as exc:  # keep serving the old snapshot
                log.error("snapshot reload failed: %s", exc)

        signal.signal(signal.SIGHUP, _reload)

    host, _, port = args.bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8008), log_level="info")
    return 0


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    try:
        cfg = effective_config(args)
    except (ConfigError, SynthConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.print_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return 0

    data_dir = Path(args.data_dir)

    from . import pipeline

    try:
        if args.command == "synth":
            data_dir.mkdir(parents=True, exist_ok=True)
            manifest = pipeline.stage_synth(cfg, data_dir)
        elif args.command == "ingest":
            data_dir.mkdir(parents=True, exist_ok=True)
            manifest = pipeline.stage_ingest(cfg, data_dir)
        elif args.command == "affectedness":
            manifest = pipeline.stage_affectedness(cfg, data_dir)
        elif args.command == "event-impact":
            manifest = pipeline.stage_event_impact(cfg, data_dir)
        elif args.command == "tas":
            manifest = pipeline.stage_tas(cfg, data_dir)
        elif args.command == "train":
            manifest = pipeline.stage_train(cfg, data_dir)
        elif args.command == "predict":
            manifest = pipeline.stage_predict(
                cfg, data_dir,
                model_path=Path(args.model) if args.model else None,
                events_path=Path(args.events) if args.events else None,
            )
        elif args.command == "deps":
            manifest = pipeline.stage_deps(cfg, data_dir)
        elif args.command == "snapshot":
            manifest = pipeline.stage_snapshot(cfg, data_dir)
        elif args.command == "serve":
            return _serve(args, cfg)
        elif args.command == "all":
            manifests = pipeline.run_all(cfg, data_dir, with_synth=not args.no_synth)
            for m in manifests:
                log.info("stage %-12s done in %.2fs", m["stage"], m["wall_time_s"])
            return 0
        elif args.command == "report":
            from . import reports

            written = reports.render_reports(data_dir, Path(args.out) if args.out else None)
            for path in written:
                log.info("wrote %s", path)
            return 0
        else:  # pragma: no cover - argparse enforces choices
            return 1
    except pipeline.MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, SynthConfigError, GraphError, IngestError, SnapshotError, pipeline.PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    log.info("stage %s done in %.2fs", manifest["stage"], manifest["wall_time_s"])
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
