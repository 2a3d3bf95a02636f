"""JSON/PNG HTTP API consumed by the analyst console.

Endpoints mirror the viewer's needs: a filterable alert list, alert detail
with audit trail, status transitions with optimistic versioning, raster
layers rendered to PNG, the site registry and the public CSV export. All
numbers shown in the console come from here; the client never recomputes
science.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from PIL import Image
from pydantic import BaseModel

from ..raster import Band, load_scene
from .ingest import IngestJob
from .store import AlertStore, ConflictError, NotFound, TransitionError

LAYERS = ("rgb", "mbmp", "dch4", "prob", "mask")


class TransitionRequest(BaseModel):
    status: str
    reviewer: str
    note: str = ""
    version: int | None = None
    edited_mask: list[list[int]] | None = None  # optional re-annotation, row-major 0/1


def create_app(store: AlertStore, job: IngestJob) -> FastAPI:
    app = FastAPI(title="plumewatch alertd", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/alerts")
    def list_alerts(
        score_min: float | None = None,
        score_max: float | None = None,
        flux_min: float | None = None,
        flux_max: float | None = None,
        satellite: str | None = None,
        country: str | None = None,
        status: str | None = None,
        site_id: str | None = None,
        limit: int = Query(50, ge=1, le=500),
        offset: int = Query(0, ge=0),
    ):
        alerts, total = store.list_alerts(
            score_min=score_min, score_max=score_max, flux_min=flux_min,
            flux_max=flux_max, satellite=satellite, country=country,
            status=status, site_id=site_id, limit=limit, offset=offset,
        )
        return {"alerts": [a.to_dict() for a in alerts], "total": total,
                "limit": limit, "offset": offset}

    @app.get("/alerts/{alert_id}")
    def get_alert(alert_id: str):
        try:
            alert = store.get_alert(alert_id)
        except NotFound as exc:
            raise HTTPException(404, str(exc)) from exc
        return {"alert": alert.to_dict(), "audit": store.audit_log(alert_id)}

    @app.post("/alerts/{alert_id}/transition")
    def transition(alert_id: str, request: TransitionRequest):
        try:
            if request.edited_mask is not None:
                _requantify(store, job, alert_id, request.edited_mask)
            alert = store.transition_alert(
                alert_id, request.status, request.reviewer, request.note,
                expected_version=request.version,
            )
        except NotFound as exc:
            raise HTTPException(404, str(exc)) from exc
        except TransitionError as exc:
            raise HTTPException(400, str(exc)) from exc
        except ConflictError as exc:
            raise HTTPException(409, str(exc)) from exc
        return {"alert": alert.to_dict(), "audit": store.audit_log(alert_id)}

    @app.get("/scenes/{scene_id}/layers/{layer}")
    def scene_layer(scene_id: str, layer: str):
        if layer not in LAYERS:
            raise HTTPException(400, f"unknown layer {layer!r}; expected one of {LAYERS}")
        try:
            png = render_layer(store, job, scene_id, layer)
        except NotFound as exc:
            raise HTTPException(404, str(exc)) from exc
        return Response(content=png, media_type="image/png")

    @app.get("/scenes/{scene_id}/mask")
    def scene_mask(scene_id: str):
        arrays = _load_prediction_arrays(store, job, scene_id)
        return {"scene_id": scene_id, "mask": arrays["mask"].astype(int).tolist()}

    @app.get("/sites")
    def sites():
        return {"sites": store.sites()}

    @app.get("/export")
    def export(from_: str = Query(alias="from", default="0000"),
               to: str = Query(default="9999")):
        rows = store.export_public(from_, to)
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(["site_id", "timestamp", "flux_kg_h", "flux_uncertainty_kg_h",
                         "country", "satellite", "status", "notified_at"])
        for row in rows:
            writer.writerow([row["site_id"], row["timestamp"], row["flux_kg_h"],
                             row["flux_uncertainty_kg_h"], row["country"],
                             row["satellite"], row["status"], row["notified_at"] or ""])
        return Response(content=buffer.getvalue(), media_type="text/csv")

    return app


def _load_prediction_arrays(store: AlertStore, job: IngestJob, scene_id: str) -> dict:
    row = store.prediction_row(scene_id)
    path = Path(row["raster_path"])
    if not path.exists():
        raise NotFound(f"prediction raster {path} missing")
    with np.load(path) as data:
        return {key: data[key] for key in data.files}


def _requantify(store: AlertStore, job: IngestJob, alert_id: str, edited_mask) -> None:
    """Analyst-corrected mask: recompute the flux estimate for the alert."""
    from .. import quantify

    alert = store.get_alert(alert_id)
    arrays = _load_prediction_arrays(store, job, alert.scene_id)
    mask = np.asarray(edited_mask, dtype=bool)
    if mask.shape != arrays["dch4"].shape:
        raise TransitionError(
            f"edited mask shape {mask.shape} does not match scene {arrays['dch4'].shape}"
        )
    arrays["mask"] = mask
    row = store.prediction_row(alert.scene_id)
    np.savez_compressed(row["raster_path"], **arrays)
    scene_row = store.scene_row(alert.scene_id)
    scene = load_scene(scene_row["bundle_path"], expected_crop_m=job.expected_crop_m)
    if mask.any() and scene.wind_speed > 0:
        estimate = quantify.flux(np.nan_to_num(arrays["dch4"], nan=0.0), mask, scene.wind)
        store.update_flux(alert_id, estimate.flux_kg_h, estimate.uncertainty_kg_h,
                          estimate.ime_kg)


# ---------------------------------------------------------------------------
# Raster rendering
# ---------------------------------------------------------------------------

_HEAT_STOPS = np.array([
    [13, 8, 135],
    [126, 3, 168],
    [204, 71, 120],
    [248, 149, 64],
    [240, 249, 33],
], dtype=np.float64)


def _heat_rgb(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] to a perceptual dark-to-bright ramp; NaN renders black."""
    v = np.nan_to_num(np.clip(values, 0.0, 1.0), nan=0.0)
    x = v * (len(_HEAT_STOPS) - 1)
    i = np.clip(x.astype(int), 0, len(_HEAT_STOPS) - 2)
    t = (x - i)[..., None]
    rgb = _HEAT_STOPS[i] * (1 - t) + _HEAT_STOPS[i + 1] * t
    rgb[np.isnan(values)] = 0
    return rgb.astype(np.uint8)


def _stretch(band: np.ndarray) -> np.ndarray:
    finite = band[np.isfinite(band)]
    if finite.size == 0:
        return np.zeros_like(band)
    lo, hi = np.percentile(finite, [2, 98])
    if hi <= lo:
        hi = lo + 1e-6
    return np.clip((band - lo) / (hi - lo), 0.0, 1.0)


def render_layer(store: AlertStore, job: IngestJob, scene_id: str, layer: str) -> bytes:
    if layer == "rgb":
        scene_row = store.scene_row(scene_id)
        scene = load_scene(scene_row["bundle_path"], expected_crop_m=job.expected_crop_m)
        rgb = np.stack(
            [_stretch(scene.band(b)) for b in (Band.RED, Band.GREEN, Band.BLUE)], axis=-1
        )
        image = (rgb * 255).astype(np.uint8)
    else:
        arrays = _load_prediction_arrays(store, job, scene_id)
        if layer == "prob":
            image = _heat_rgb(arrays["prob"])
        elif layer == "mask":
            image = np.where(arrays["mask"][..., None], 255, 0).astype(np.uint8).repeat(3, -1)
        elif layer == "dch4":
            dch4 = arrays["dch4"]
            finite = dch4[np.isfinite(dch4)]
            top = float(np.percentile(finite, 99.5)) if finite.size else 1.0
            image = _heat_rgb(dch4 / max(top, 1.0))
        else:  # mbmp: diverging signal centred on zero
            signal = arrays["delta_r"]
            finite = np.abs(signal[np.isfinite(signal)])
            scale = float(np.percentile(finite, 99.0)) if finite.size else 1.0
            image = _heat_rgb(0.5 - signal / max(scale, 1e-6) * 0.5)
    buffer = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buffer, format="PNG")
    return buffer.getvalue()
