"""Read-only HTTP JSON API over an immutable snapshot.

Every endpoint is a GET returning JSON assembled from the snapshot; nothing
mutates server state. Unknown ids yield 404 with a JSON error body, malformed
query parameters yield 400. The snapshot can be swapped atomically (e.g. from
a SIGHUP handler); in-flight requests keep the instance they started with.
"""

from __future__ import annotations

import datetime as dt
from typing import Iterable

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import geojson
from .impact import TypicallyAffectedSubgraph
from .ingest import Event, Venue
from .snapshot import Snapshot


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _event_json(snapshot: Snapshot, event: Event) -> dict:
    return {
        "id": event.id,
        "venue_id": event.venue_id,
        "name": event.name,
        "category": event.category,
        "start": event.start.isoformat(),
        "end": event.end.isoformat() if event.end else None,
        "kind": snapshot.event_kind(event),
    }


def _venue_json(snapshot: Snapshot, venue: Venue) -> dict:
    return {
        "id": venue.id,
        "name": venue.name,
        "lon": venue.location.lon,
        "lat": venue.location.lat,
        "capacity": venue.capacity,
        "n_events": len(snapshot.catalog.events_at(venue.id)),
        "has_tas": venue.id in snapshot.tas,
    }


def _curve_json(samples: Iterable[tuple[int, float]]) -> list[dict]:
    return [{"offset_min": o, "delay_s_per_km": v} for o, v in samples]


def _tas_geojson(snapshot: Snapshot, tas: TypicallyAffectedSubgraph) -> dict:
    return geojson.feature_collection(
        [
            geojson.unit_feature(
                snapshot.graph, uid, {"layer": "tas", "frequency": tas.frequencies[uid]}
            )
            for uid in tas.units
        ]
    )


def create_app(snapshot: Snapshot, cors_origins: tuple[str, ...] = ("*",)) -> FastAPI:
    app = FastAPI(title="trafficscope", docs_url=None, redoc_url=None)
    app.state.snapshot = snapshot
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["GET"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": exc.message})

    def current() -> Snapshot:
        return app.state.snapshot

    def get_event(event_id: str) -> Event:
        try:
            return current().catalog.event(event_id)
        except KeyError:
            raise ApiError(404, f"unknown event {event_id!r}")

    @app.get("/api/health")
    def health():
        snap = current()
        return {
            "status": "ok",
            "as_of": snap.as_of.strftime("%Y-%m-%dT%H:%M"),
            "fingerprints": snap.fingerprints,
            "counts": {
                "venues": len(snap.catalog.venues),
                "events": len(snap.catalog.events),
                "impacts": len(snap.impacts),
                "predictions": len(snap.predictions),
                "subgraphs": len(snap.subgraphs),
                "dependencies": len(snap.dependencies),
            },
        }

    @app.get("/api/venues")
    def venues():
        snap = current()
        return {"venues": [_venue_json(snap, v) for v in sorted(snap.catalog.venues.values(), key=lambda v: v.id)]}

    @app.get("/api/events")
    def events(date: str | None = None):
        snap = current()
        found = snap.catalog.events
        if date is not None:
            try:
                day = dt.date.fromisoformat(date)
            except ValueError:
                raise ApiError(400, f"malformed date {date!r}; expected YYYY-MM-DD")
            found = [e for e in found if e.start.day == day]
        return {"date": date, "events": [_event_json(snap, e) for e in found]}

    @app.get("/api/events/{event_id}/impact")
    def event_impact(event_id: str):
        snap = current()
        event = get_event(event_id)
        record = snap.impacts.get(event_id)
        if record is None:
            raise ApiError(404, f"no historical impact record for event {event_id!r}")
        venue = snap.catalog.venues[event.venue_id]
        return {
            "event": _event_json(snap, event),
            "source": "historical",
            "spatial_radius_m": record.radius_m,
            "argmax_unit": record.argmax_unit,
            "skip_reason": record.skip_reason,
            "subgraph": geojson.units_collection(snap.graph, record.units, layer="affected"),
            "venue_circle": geojson.venue_circle_feature(venue, record.radius_m),
            "temporal_curve": _curve_json(record.curve.samples if record.curve else ()),
        }

    @app.get("/api/events/{event_id}/prediction")
    def event_prediction(event_id: str):
        snap = current()
        event = get_event(event_id)
        record = snap.predictions.get(event_id)
        if record is None:
            raise ApiError(404, f"no prediction record for event {event_id!r}")
        venue = snap.catalog.venues[event.venue_id]
        tas = snap.tas.get(event.venue_id)
        return {
            "event": _event_json(snap, event),
            "source": "prediction",
            "prediction": True,
            "predicted_radius_m": record.radius_m,
            "tas": _tas_geojson(snap, tas) if tas else geojson.feature_collection([]),
            "venue_circle": geojson.venue_circle_feature(venue, record.radius_m),
            "predicted_curve": _curve_json(record.curve.samples),
        }

    @app.get("/api/venues/{venue_id}/tas")
    def venue_tas(venue_id: str, tau: float | None = None):
        snap = current()
        if venue_id not in snap.catalog.venues:
            raise ApiError(404, f"unknown venue {venue_id!r}")
        stored = snap.tas.get(venue_id)
        if stored is None:
            raise ApiError(404, f"no typically-affected record for venue {venue_id!r}")
        if tau is None:
            tas = stored
        else:
            if not 0.0 < tau <= 1.0:
                raise ApiError(400, f"tau must be in (0, 1], got {tau}")
            tas = TypicallyAffectedSubgraph.at_threshold(
                venue_id, stored.frequencies, stored.n_events, tau
            )
        return {
            "venue_id": venue_id,
            "tau": tas.tau,
            "n_events": tas.n_events,
            "units": list(tas.units),
            "frequencies": dict(sorted(tas.frequencies.items())),
            "geojson": _tas_geojson(snap, tas),
        }

    @app.get("/api/dependencies")
    def dependencies():
        snap = current()
        return {
            "subgraphs": geojson.subgraphs_collection(snap.graph, snap.subgraphs),
            "pairs": [
                {"a": p.a, "b": p.b, "mi_bits": p.mi_bits, "distance_m": p.distance_m, "score": p.score}
                for p in snap.dependencies
            ],
        }

    @app.get("/api/dependencies/{subgraph_id}")
    def dependency_partners(subgraph_id: int):
        snap = current()
        try:
            snap.subgraph(subgraph_id)
        except KeyError:
            raise ApiError(404, f"unknown subgraph {subgraph_id}")
        partners = []
        for pair in snap.partners_of(subgraph_id):
            partners.append(
                {
                    "partner": pair.b if pair.a == subgraph_id else pair.a,
                    "mi_bits": pair.mi_bits,
                    "distance_m": pair.distance_m,
                    "score": pair.score,
                }
            )
        return {"subgraph_id": subgraph_id, "partners": partners}

    return app


def swap_snapshot(app: FastAPI, snapshot: Snapshot) -> None:
    """Atomically replace the served snapshot (readers see old or new, never a mix)."""
    app.state.snapshot = snapshot
