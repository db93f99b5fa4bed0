"""File-based pipeline stages.

Every stage reads its inputs from the data directory, writes versioned JSON /
GeoJSON artifacts plus a ``manifest_<stage>.json`` (inputs, parameters,
counts, wall time, artifact hashes), and nothing else. Reruns with identical
inputs and config produce byte-identical artifacts; the only volatile manifest
field is the wall time, which is excluded from the manifest fingerprint.
"""

from __future__ import annotations

import datetime as dt
import time
from pathlib import Path

from . import geojson, snapshot as snapshot_mod, synth as synth_mod
from .affectedness import AffectednessMask, build_profile, classify, compute_loads
from .config import PipelineConfig
from .graph import RoadGraph
from .impact import (
    ImpactCurve,
    SubgraphParams,
    TypicallyAffectedSubgraph,
    affected_subgraph,
    spatial_impact,
    temporal_impact,
    typically_affected_subgraph,
)
from .ingest import Catalog, TrafficStore, load_events, load_traffic
from .ioutil import read_json, sha256_file, sha256_obj, write_json
from .predict import ImpactPredictor
from .snapshot import ImpactRecord, PredictionRecord, Snapshot, build_snapshot
from .structdeps import StableSubgraph, cluster_timestep, merge_subgraphs, score_dependencies
from .timegrid import TimeBin, bin_range


class PipelineError(RuntimeError):
    pass


class MissingInputError(PipelineError):
    """An expected input file does not exist; the message names the path."""


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing input file: {path}")
    return path


def _resolve(data_dir: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else data_dir / path


def manifest_fingerprint(manifest: dict) -> str:
    stable = {k: v for k, v in manifest.items() if k != "wall_time_s"}
    return sha256_obj(stable)


def _write_manifest(
    data_dir: Path,
    stage: str,
    params: dict,
    inputs: dict[str, Path],
    outputs: dict[str, Path],
    counts: dict,
    started: float,
) -> dict:
    manifest = {
        "stage": stage,
        "format_version": 1,
        "params": params,
        "inputs": {name: sha256_file(path) for name, path in sorted(inputs.items())},
        "outputs": {name: sha256_file(path) for name, path in sorted(outputs.items())},
        "counts": counts,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    manifest["fingerprint"] = manifest_fingerprint(manifest)
    write_json(data_dir / f"manifest_{stage}.json", manifest)
    return manifest


# ------------------------------------------------------------------ loading


def load_graph(cfg: PipelineConfig, data_dir: Path) -> RoadGraph:
    return RoadGraph.load(_require(_resolve(data_dir, cfg.graph_path)))


def load_catalog(cfg: PipelineConfig, data_dir: Path) -> Catalog:
    return load_events(_require(_resolve(data_dir, cfg.events_path)))


def load_store(cfg: PipelineConfig, data_dir: Path, graph: RoadGraph) -> TrafficStore:
    normalized = data_dir / "traffic_norm.csv"
    path = normalized if normalized.exists() else _resolve(data_dir, cfg.traffic_path)
    store, _report = load_traffic(_require(path), graph, strict=not cfg.lenient)
    return store

def load_mask(data_dir: Path, graph: RoadGraph) -> AffectednessMask:
    doc = read_json(_require(data_dir / "mask.json"))
    return AffectednessMask.from_json_dict(doc, sorted(graph.units))


def resolve_as_of(cfg: PipelineConfig, data_dir: Path) -> dt.datetime:
    """Configured --as-of, or the end of the ingested data."""
    if cfg.as_of is not None:
        return cfg.as_of
    report_path = data_dir / "ingest_report.json"
    if report_path.exists():
        doc = read_json(report_path)
        return dt.datetime.fromisoformat(doc["data_end"])
    raise MissingInputError(f"missing input file: {report_path} (run the ingest stage or pass --as-of)")


# ------------------------------------------------------------------- stages


def stage_synth(cfg: PipelineConfig, data_dir: Path) -> dict:
    started = time.perf_counter()
    data_dir.mkdir(parents=True, exist_ok=True)
    result = synth_mod.generate(cfg.synth)
    graph_path = data_dir / "graph.json"
    traffic_path = data_dir / "traffic.csv"
    events_path = data_dir / "events.json"
    truth_path = data_dir / "truth.json"
    result.graph.save(graph_path)
    synth_mod.write_traffic_csv(result.traffic, traffic_path)
    write_json(events_path, result.catalog.to_json_dict())
    write_json(
        truth_path,
        {
            "format_version": 1,
            "events": [result.truth[eid].to_json_dict() for eid in sorted(result.truth)],
        },
    )
    return _write_manifest(
        data_dir,
        "synth",
        params=cfg.synth.to_dict(),
        inputs={},
        outputs={
            "graph.json": graph_path,
            "traffic.csv": traffic_path,
            "events.json": events_path,
            "truth.json": truth_path,
        },
        counts={
            "units": len(result.graph.units),
            "nodes": len(result.graph.nodes),
            "observations": result.traffic.n_observations,
            "venues": len(result.catalog.venues),
            "events": len(result.catalog.events),
        },
        started=started,
    )


def stage_ingest(cfg: PipelineConfig, data_dir: Path) -> dict:
    started = time.perf_counter()
    graph_path = _require(_resolve(data_dir, cfg.graph_path))
    traffic_path = _require(_resolve(data_dir, cfg.traffic_path))
    events_path = _require(_resolve(data_dir, cfg.events_path))
    graph = RoadGraph.load(graph_path)
    store, report = load_traffic(traffic_path, graph, strict=not cfg.lenient)
    catalog = load_events(events_path)

    norm_path = data_dir / "traffic_norm.csv"
    synth_mod.write_traffic_csv(store, norm_path)
    report_path = data_dir / "ingest_report.json"
    write_json(
        report_path,
        {
            "format_version": 1,
            **report.to_json_dict(),
            "data_start": store.first_bin().start().strftime("%Y-%m-%dT%H:%M"),
            "data_end": (store.last_bin().start() + dt.timedelta(minutes=15)).strftime("%Y-%m-%dT%H:%M"),
            "units": store.n_units,
            "observations": store.n_observations,
        },
    )
    return _write_manifest(
        data_dir,
        "ingest",
        params={"lenient": cfg.lenient},
        inputs={"graph.json": graph_path, "traffic.csv": traffic_path, "events.json": events_path},
        outputs={"traffic_norm.csv": norm_path, "ingest_report.json": report_path},
        counts={
            "rows_read": report.rows_read,
            "kept": report.kept,
            "dropped_unknown_unit": report.dropped_unknown_unit,
            "deduplicated": report.deduplicated,
            "malformed": report.malformed,
            "units": store.n_units,
            "venues": len(catalog.venues),
            "events": len(catalog.events),
        },
        started=started,
    )


def stage_affectedness(cfg: PipelineConfig, data_dir: Path) -> dict:
    started = time.perf_counter()
    graph = load_graph(cfg, data_dir)
    store = load_store(cfg, data_dir, graph)
    loads = compute_loads(store, graph)
    profile = build_profile(loads, cfg.min_samples, cfg.train_from, cfg.train_to)
    mask = classify(loads, profile)

    profile_path = data_dir / "profile.json"
    mask_path = data_dir / "mask.json"
    write_json(profile_path, profile.to_json_dict(), compact=True)
    write_json(mask_path, mask.to_json_dict())
    usable_groups = int((profile.counts >= cfg.min_samples).sum())
    return _write_manifest(
        data_dir,
        "affectedness",
        params={
            "min_samples": cfg.min_samples,
            "train_from": cfg.train_from.isoformat() if cfg.train_from else None,
            "train_to": cfg.train_to.isoformat() if cfg.train_to else None,
        },
        inputs={"traffic": data_dir / "traffic_norm.csv" if (data_dir / "traffic_norm.csv").exists() else _resolve(data_dir, cfg.traffic_path)},
        outputs={"profile.json": profile_path, "mask.json": mask_path},
        counts={
            "units_profiled": len(profile.unit_ids),
            "groups_usable": usable_groups,
            "flags": mask.total_flags,
        },
        started=started,
    )


def stage_event_impact(cfg: PipelineConfig, data_dir: Path) -> dict:
    started = time.perf_counter()
    graph = load_graph(cfg, data_dir)
    catalog = load_catalog(cfg, data_dir)
    store = load_store(cfg, data_dir, graph)
    mask = load_mask(data_dir, graph)
    as_of = resolve_as_of(cfg, data_dir)
    params = cfg.subgraph

    historical = [e for e in catalog.events if e.start.start() <= as_of]
    future = [e for e in catalog.events if e.start.start() > as_of]

    subgraphs = {}
    for event in historical:
        venue = catalog.venue_of(event)
        subgraphs[event.id] = affected_subgraph(event, venue, graph, mask, params)

    tas_by_venue: dict[str, TypicallyAffectedSubgraph] = {}
    for venue_id in sorted({e.venue_id for e in historical}):
        event_subgraphs = [subgraphs[e.id] for e in historical if e.venue_id == venue_id]
        tas_by_venue[venue_id] = typically_affected_subgraph(venue_id, event_subgraphs, cfg.tau)

    records = []
    skip_counts: dict[str, int] = {}
    for event in historical:
        subgraph = subgraphs[event.id]
        impact = spatial_impact(subgraph, catalog.venue_of(event), graph)
        tas = tas_by_venue[event.venue_id]
        skip_reason = None
        curve = None
        if tas.units:
            curve = temporal_impact(event, tas, store, graph, params)
        else:
            skip_reason = "empty_tas"
        if skip_reason:
            skip_counts[skip_reason] = skip_counts.get(skip_reason, 0) + 1
        records.append(
            {
                "event_id": event.id,
                "venue_id": event.venue_id,
                "units": list(subgraph.units),
                "connected": subgraph.connected,
                "spans": {uid: [a.isoformat(), b.isoformat()] for uid, (a, b) in sorted(subgraph.spans.items())},
                "radius_m": impact.radius_m,
                "argmax_unit": impact.argmax_unit,
                "curve": curve.to_json_list() if curve else None,
                "skip_reason": skip_reason,
            }
        )

    impacts_path = data_dir / "impacts.json"
    write_json(
        impacts_path,
        {
            "format_version": 1,
            "as_of": as_of.strftime("%Y-%m-%dT%H:%M"),
            "params": {
                "max_radius_m": params.max_radius_m,
                "seed_radius_m": params.seed_radius_m,
                "window_before_min": params.window_before_min,
                "window_after_min": params.window_after_min,
                "tau": cfg.tau,
            },
            "events": records,
        },
    )
    tas_path = data_dir / "tas.json"
    write_json(tas_path, _tas_doc(tas_by_venue, cfg.tau))

    features = []
    for record in records:
        venue = catalog.venues[record["venue_id"]]
        for uid in record["units"]:
            features.append(geojson.unit_feature(graph, uid, {"layer": "affected", "event_id": record["event_id"]}))
        features.append(geojson.venue_circle_feature(venue, record["radius_m"], layer="spatial_impact"))
    impacts_geo_path = data_dir / "impacts.geojson"
    write_json(impacts_geo_path, geojson.feature_collection(features))
    tas_geo_path = data_dir / "tas.geojson"
    write_json(tas_geo_path, _tas_geojson_doc(graph, tas_by_venue))

    return _write_manifest(
        data_dir,
        "event-impact",
        params={"tau": cfg.tau, "max_radius_m": params.max_radius_m, "seed_radius_m": params.seed_radius_m,
                "window_before_min": params.window_before_min, "window_after_min": params.window_after_min},
        inputs={"mask.json": data_dir / "mask.json", "events.json": _resolve(data_dir, cfg.events_path)},
        outputs={
            "impacts.json": impacts_path,
            "tas.json": tas_path,
            "impacts.geojson": impacts_geo_path,
            "tas.geojson": tas_geo_path,
        },
        counts={
            "events_total": len(catalog.events),
            "events_processed": len(historical),
            "impact_records": len(records),
            "events_future": len(future),
            "curve_skips": skip_counts,
            "venues_with_tas": len(tas_by_venue),
        },
        started=started,
    )


def _tas_doc(tas_by_venue: dict[str, TypicallyAffectedSubgraph], tau: float) -> dict:
    return {
        "format_version": 1,
        "tau": tau,
        "venues": [
            {
                "venue_id": t.venue_id,
                "n_events": t.n_events,
                "frequencies": {uid: round(f, 9) for uid, f in sorted(t.frequencies.items())},
                "units": list(t.units),
            }
            for t in sorted(tas_by_venue.values(), key=lambda t: t.venue_id)
        ],
    }


def _tas_geojson_doc(graph: RoadGraph, tas_by_venue: dict[str, TypicallyAffectedSubgraph]) -> dict:
    features = []
    for tas in sorted(tas_by_venue.values(), key=lambda t: t.venue_id):
        for uid in tas.units:
            features.append(
                geojson.unit_feature(
                    graph, uid,
                    {"layer": "tas", "venue_id": tas.venue_id, "frequency": tas.frequencies[uid]},
                )
            )
    return geojson.feature_collection(features)


def load_tas_records(data_dir: Path) -> dict[str, TypicallyAffectedSubgraph]:
    doc = read_json(_require(data_dir / "tas.json"))
    tau = float(doc["tau"])
    records = {}
    for raw in doc["venues"]:
        records[raw["venue_id"]] = TypicallyAffectedSubgraph.at_threshold(
            raw["venue_id"], {k: float(v) for k, v in raw["frequencies"].items()}, int(raw["n_events"]), tau
        )
    return records


def stage_tas(cfg: PipelineConfig, data_dir: Path) -> dict:
    """Re-derive the typically affected subgraphs from impacts.json at cfg.tau."""
    started = time.perf_counter()
    graph = load_graph(cfg, data_dir)
    impacts_doc = read_json(_require(data_dir / "impacts.json"))
    per_venue: dict[str, list[dict]] = {}
    for record in impacts_doc["events"]:
        per_venue.setdefault(record["venue_id"], []).append(record)
    tas_by_venue = {}
    for venue_id, records in sorted(per_venue.items()):
        counts: dict[str, int] = {}
        for record in records:
            for uid in record["units"]:
                counts[uid] = counts.get(uid, 0) + 1
        frequencies = {uid: c / len(records) for uid, c in counts.items()}
        tas_by_venue[venue_id] = TypicallyAffectedSubgraph.at_threshold(
            venue_id, frequencies, len(records), cfg.tau
        )
    tas_path = data_dir / "tas.json"
    tas_geo_path = data_dir / "tas.geojson"
    write_json(tas_path, _tas_doc(tas_by_venue, cfg.tau))
    write_json(tas_geo_path, _tas_geojson_doc(graph, tas_by_venue))
    return _write_manifest(
        data_dir,
        "tas",
        params={"tau": cfg.tau},
        inputs={"impacts.json": data_dir / "impacts.json"},
        outputs={"tas.json": tas_path, "tas.geojson": tas_geo_path},
        counts={"venues_with_tas": len(tas_by_venue)},
        started=started,
    )


def stage_train(cfg: PipelineConfig, data_dir: Path) -> dict:
    started = time.perf_counter()
    catalog = load_catalog(cfg, data_dir)
    impacts_doc = read_json(_require(data_dir / "impacts.json"))
    records = []
    for raw in impacts_doc["events"]:
        event = catalog.event(raw["event_id"])
        venue = catalog.venue_of(event)
        curve = ImpactCurve.from_json_list(event.id, raw["curve"]) if raw.get("curve") else None
        records.append((event, venue, float(raw["radius_m"]), curve))
    if not records:
        raise PipelineError("no historical impact records to train on")
    predictor = ImpactPredictor.train(records, k=cfg.knn_k)
    model_path = data_dir / "model.json"
    predictor.save(model_path)
    return _write_manifest(
        data_dir,
        "train",
        params={"k": cfg.knn_k},
        inputs={"impacts.json": data_dir / "impacts.json"},
        outputs={"model.json": model_path},
        counts={"exemplars": len(predictor.exemplars)},
        started=started,
    )


def stage_predict(cfg: PipelineConfig, data_dir: Path, model_path: Path | None = None,
                  events_path: Path | None = None) -> dict:
    started = time.perf_counter()
    model_file = _require(model_path or data_dir / "model.json")
    events_file = _require(events_path or _resolve(data_dir, cfg.events_path))
    catalog = load_events(events_file)
    predictor = ImpactPredictor.load(model_file)
    as_of = resolve_as_of(cfg, data_dir)

    future = [e for e in catalog.events if e.start.start() > as_of]
    records = []
    for event in future:
        venue = catalog.venues.get(event.venue_id)
        radius = predictor.predict_spatial(event, venue)
        curve = predictor.predict_temporal(event, venue)
        records.append(
            {
                "event_id": event.id,
                "prediction": True,
                "radius_m": radius,
                "curve": curve.to_json_list(),
            }
        )
    predictions_path = data_dir / "predictions.json"
    write_json(
        predictions_path,
        {
            "format_version": 1,
            "as_of": as_of.strftime("%Y-%m-%dT%H:%M"),
            "model_fingerprint": predictor.fingerprint(),
            "events": records,
        },
    )
    return _write_manifest(
        data_dir,
        "predict",
        params={"k": predictor.k, "as_of": as_of.strftime("%Y-%m-%dT%H:%M")},
        inputs={"model.json": model_file, "events.json": events_file},
        outputs={"predictions.json": predictions_path},
        counts={"events_future": len(future), "predictions": len(records)},
        started=started,
    )


def stage_deps(cfg: PipelineConfig, data_dir: Path) -> dict:
    started = time.perf_counter()
    graph = load_graph(cfg, data_dir)
    mask = load_mask(data_dir, graph)

    clusters = []
    for bin_ in mask.affected_bins():
        clusters.extend(cluster_timestep(bin_, mask, graph))
    stable = merge_subgraphs(clusters, cfg.theta_overlap)
    domain = bin_range(mask.first_bin(), mask.last_bin())
    pairs = score_dependencies(stable, domain, graph, cfg.deps)

    deps_path = data_dir / "dependencies.json"
    write_json(
        deps_path,
        {
            "format_version": 1,
            "params": {
                "theta_overlap": cfg.theta_overlap,
                "delta0_m": cfg.deps.delta0_m,
                "d_max_m": cfg.deps.d_max_m,
                "score_min": cfg.deps.score_min,
            },
            "domain": {"start": mask.first_bin().isoformat(), "n_bins": mask.n_bins},
            "subgraphs": [
                {"id": s.id, "units": s.sorted_units(), "activity": [b.isoformat() for b in s.sorted_activity()]}
                for s in stable
            ],
            "pairs": [
                {"a": p.a, "b": p.b, "mi_bits": p.mi_bits, "distance_m": p.distance_m, "score": p.score}
                for p in pairs
            ],
        },
    )
    subgraphs_geo_path = data_dir / "subgraphs.geojson"
    write_json(subgraphs_geo_path, geojson.subgraphs_collection(graph, stable))
    return _write_manifest(
        data_dir,
        "deps",
        params={
            "theta_overlap": cfg.theta_overlap,
            "delta0_m": cfg.deps.delta0_m,
            "d_max_m": cfg.deps.d_max_m,
            "score_min": cfg.deps.score_min,
        },
        inputs={"mask.json": data_dir / "mask.json"},
        outputs={"dependencies.json": deps_path, "subgraphs.geojson": subgraphs_geo_path},
        counts={
            "timestep_clusters": len(clusters),
            "stable_subgraphs": len(stable),
            "pairs": len(pairs),
        },
        started=started,
    )


def stage_snapshot(cfg: PipelineConfig, data_dir: Path) -> dict:
    started = time.perf_counter()
    graph = load_graph(cfg, data_dir)
    catalog = load_catalog(cfg, data_dir)
    as_of = resolve_as_of(cfg, data_dir)

    impacts_doc = read_json(_require(data_dir / "impacts.json"))
    impacts = [
        ImpactRecord(
            event_id=raw["event_id"],
            units=tuple(raw["units"]),
            radius_m=float(raw["radius_m"]),
            argmax_unit=raw.get("argmax_unit"),
            curve=ImpactCurve.from_json_list(raw["event_id"], raw["curve"]) if raw.get("curve") else None,
            connected=bool(raw.get("connected", True)),
            skip_reason=raw.get("skip_reason"),
        )
        for raw in impacts_doc["events"]
    ]
    predictions_doc = read_json(_require(data_dir / "predictions.json"))
    predictions = [
        PredictionRecord(
            event_id=raw["event_id"],
            radius_m=float(raw["radius_m"]),
            curve=ImpactCurve.from_json_list(raw["event_id"], raw["curve"]),
        )
        for raw in predictions_doc["events"]
    ]
    tas_records = load_tas_records(data_dir)
    deps_doc = read_json(_require(data_dir / "dependencies.json"))
    stable = [
        StableSubgraph(
            id=int(raw["id"]),
            units=set(raw["units"]),
            activity={TimeBin.parse(stamp) for stamp in raw["activity"]},
        )
        for raw in deps_doc["subgraphs"]
    ]
    from .structdeps import DependencyPair

    pairs = [
        DependencyPair(
            a=int(raw["a"]), b=int(raw["b"]), mi_bits=float(raw["mi_bits"]),
            distance_m=float(raw["distance_m"]), score=float(raw["score"]),
        )
        for raw in deps_doc["pairs"]
    ]
    fingerprints = {
        "graph": sha256_file(_resolve(data_dir, cfg.graph_path)),
        "events": sha256_file(_resolve(data_dir, cfg.events_path)),
        "impacts": sha256_file(data_dir / "impacts.json"),
        "predictions": sha256_file(data_dir / "predictions.json"),
        "dependencies": sha256_file(data_dir / "dependencies.json"),
        "config": cfg.fingerprint(),
    }
    snap = build_snapshot(
        graph=graph,
        catalog=catalog,
        as_of=as_of,
        impacts=impacts,
        predictions=predictions,
        tas=list(tas_records.values()),
        subgraphs=stable,
        dependencies=pairs,
        fingerprints=fingerprints,
    )
    snapshot_path = data_dir / "snapshot.json"
    snapshot_mod.save(snap, snapshot_path)
    return _write_manifest(
        data_dir,
        "snapshot",
        params={"as_of": as_of.strftime("%Y-%m-%dT%H:%M")},
        inputs={
            "impacts.json": data_dir / "impacts.json",
            "predictions.json": data_dir / "predictions.json",
            "tas.json": data_dir / "tas.json",
            "dependencies.json": data_dir / "dependencies.json",
        },
        outputs={"snapshot.json": snapshot_path},
        counts={
            "events": len(catalog.events),
            "impacts": len(impacts),
            "predictions": len(predictions),
            "subgraphs": len(stable),
            "dependencies": len(pairs),
        },
        started=started,
    )


ALL_STAGES = ("synth", "ingest", "affectedness", "event-impact", "tas", "train", "predict", "deps", "snapshot")


def run_all(cfg: PipelineConfig, data_dir: Path, with_synth: bool = True) -> list[dict]:
    """Run the full chain; with_synth=False starts from existing input files."""
    data_dir.mkdir(parents=True, exist_ok=True)
    write_json(data_dir / "pipeline_config.json", cfg.to_dict())
    manifests = []
    if with_synth:
        manifests.append(stage_synth(cfg, data_dir))
    manifests.append(stage_ingest(cfg, data_dir))
    manifests.append(stage_affectedness(cfg, data_dir))
    manifests.append(stage_event_impact(cfg, data_dir))
    manifests.append(stage_tas(cfg, data_dir))
    manifests.append(stage_train(cfg, data_dir))
    manifests.append(stage_predict(cfg, data_dir))
    manifests.append(stage_deps(cfg, data_dir))
    manifests.append(stage_snapshot(cfg, data_dir))
    return manifests


def load_snapshot(data_dir: Path) -> Snapshot:
    return snapshot_mod.load(_require(data_dir / "snapshot.json"))
