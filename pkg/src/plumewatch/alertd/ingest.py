"""Scheduled scene ingestion: retrieve, score, quantify, persist, alert.

The scene source is a watched directory tree ``{root}/scenes/{site}/{pass}``
(live archive downloaders would implement the same layout). Every new
bundle is processed exactly once, keyed by scene id; re-running a window is
a no-op. An alert row is created for every scored scene regardless of score
because triage happens in the viewer, not in the store. Per-scene failures
are recorded and never abort the batch.
"""

from __future__ import annotations

import json
import logging
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import quantify, retrieval
from ..cloudmask import ThresholdCloudMask
from ..detector import DetectorModel, build_model_input, predict
from ..raster import Scene, SiteRecord, load_scene, validity_report
from ..rtlut import RtLut
from .store import Alert, AlertStore

log = logging.getLogger("plumewatch.alertd")


class IngestDeferred(Exception):
    """Scene source unreachable; retry after the embedded backoff."""

    def __init__(self, message, retry_after_s: float = 300.0):
        super().__init__(message)
        self.retry_after_s = retry_after_s


@dataclass
class IngestJob:
    data_root: Path
    schedule_utc: str = "06:30"
    expected_crop_m: float | None = 2000.0
    lookback_days: float = retrieval.DEFAULT_LOOKBACK_DAYS

    @property
    def scene_root(self) -> Path:
        return Path(self.data_root) / "scenes"

    @property
    def prediction_root(self) -> Path:
        return Path(self.data_root) / "predictions"


def _scene_bundles(job: IngestJob, site_id: str) -> list[Path]:
    site_dir = job.scene_root / site_id
    if not site_dir.exists():
        return []
    return sorted(p for p in site_dir.iterdir() if (p / "meta.json").exists())


def _raster_path(job: IngestJob, scene_id: str) -> Path:
    return job.prediction_root / (scene_id.replace(":", "_") + ".npz")


def _quantify_prediction(product, pred, scene):
    mask = pred.mask & product.valid
    if not mask.any() or scene.wind_speed <= 0:
        return None
    columns = np.nan_to_num(product.dch4, nan=0.0)
    return quantify.flux(columns, mask, scene.wind)


def process_scene(
    job: IngestJob,
    store: AlertStore,
    site: SiteRecord,
    bundle: Path,
    model: DetectorModel,
    lut: RtLut,
    history: list[Scene],
    cloud_mask=None,
) -> tuple[Alert | None, Scene | None]:
    """Run one bundle through the full pipeline; returns (alert, scene)."""
    mask_impl = cloud_mask or ThresholdCloudMask()
    scene = load_scene(bundle, cloud_mask=mask_impl, expected_crop_m=job.expected_crop_m)
    report = validity_report(scene, mask_impl)
    if not report.usable:
        store.record_scene(scene.scene_id, site.site_id, scene.satellite.value,
                           scene.timestamp.isoformat(), bundle,
                           status="rejected_validity", report=report)
        return None, None

    if site.offshore:
        product = retrieval.mbsp(scene, lut)
        reference = scene  # self-referencing input channels for single-pass sites
    else:
        try:
            choice = retrieval.select_reference(history, scene, job.lookback_days)
        except retrieval.NoReferenceError:
            # Bootstrap: a usable pass with no prior reference cannot be
            # scored yet, but it enters history to serve future passes.
            store.record_scene(scene.scene_id, site.site_id, scene.satellite.value,
                               scene.timestamp.isoformat(), bundle,
                               status="processed", report=report)
            return None, scene
        reference = choice.reference
        product = retrieval.mbmp(scene, reference, lut)

    model_input = build_model_input(scene, reference, product, model.config)
    bank_id = site.film_bank_id or site.site_id
    pred = predict(model, model_input, bank_id)

    estimate = _quantify_prediction(product, pred, scene)

    raster_path = _raster_path(job, scene.scene_id)
    raster_path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        raster_path,
        prob=pred.prob.astype(np.float32),
        dch4=product.dch4.astype(np.float32),
        delta_r=product.delta_r.astype(np.float32),
        mask=pred.mask,
        valid=product.valid,
    )
    retrieval.save_retrieval(product, scene, bundle)
    prediction_json = {
        "scene_id": scene.scene_id,
        "scene_score": pred.scene_score,
        "pixel_threshold": pred.pixel_threshold,
        "min_blob_px": pred.min_blob_px,
        "model_version": pred.model_version,
        "film_bank": pred.film_bank,
        "retrieval_kind": product.kind,
    }
    if estimate is not None:
        prediction_json.update(estimate.to_dict())
    (bundle / "prediction.json").write_text(json.dumps(prediction_json, indent=2))

    store.record_scene(scene.scene_id, site.site_id, scene.satellite.value,
                       scene.timestamp.isoformat(), bundle, status="processed",
                       report=report)
    store.record_prediction(scene.scene_id, pred.model_version, pred.film_bank,
                            pred.scene_score, pred.pixel_threshold, pred.min_blob_px,
                            product.kind, raster_path)
    alert = store.create_alert(
        site_id=site.site_id,
        scene_id=scene.scene_id,
        timestamp=scene.timestamp.isoformat(),
        scene_score=pred.scene_score,
        country=site.country,
        satellite=scene.satellite.value,
        model_version=pred.model_version,
        flux_kg_h=estimate.flux_kg_h if estimate else None,
        flux_uncertainty_kg_h=estimate.uncertainty_kg_h if estimate else None,
        ime_kg=estimate.ime_kg if estimate else None,
    )
    return alert, scene


def run_ingest(
    job: IngestJob,
    store: AlertStore,
    registry: list[SiteRecord],
    model: DetectorModel,
    lut: RtLut,
    cloud_mask=None,
) -> list[Alert]:
    """One ingest pass over every active site; idempotent by scene id."""
    if not job.scene_root.exists():
        raise IngestDeferred(f"scene source {job.scene_root} unreachable")
    store.upsert_sites(registry)
    new_alerts: list[Alert] = []
    for site in registry:
        if not site.active:
            continue
        history: list[Scene] = []
        history_loaded = False
        for bundle in _scene_bundles(job, site.site_id):
            scene_id = f"{site.site_id}:{bundle.name}"
            if store.scene_known(scene_id):
                continue
            if not history_loaded and not site.offshore:
                history = _load_history(job, store, site, cloud_mask)
                history_loaded = True
            try:
                alert, scene = process_scene(job, store, site, bundle, model, lut,
                                             history, cloud_mask)
            except Exception as exc:  # per-scene isolation
                log.warning("scene %s failed: %s", scene_id, exc)
                store.record_scene(scene_id, site.site_id, "?", bundle.name, bundle,
                                   status="failed",
                                   failure=f"{type(exc).__name__}: {exc}")
                log.debug("%s", traceback.format_exc())
                continue
            if alert is not None:
                new_alerts.append(alert)
                store.set_watermark(site.site_id, alert.timestamp)
            if scene is not None:
                history.append(scene)
    return new_alerts


def _load_history(job: IngestJob, store: AlertStore, site: SiteRecord,
                  cloud_mask) -> list[Scene]:
    scenes = []
    for row in store.scenes_for_site(site.site_id):
        try:
            scenes.append(load_scene(row["bundle_path"], cloud_mask=cloud_mask,
                                     expected_crop_m=job.expected_crop_m))
        except Exception as exc:
            log.warning("history bundle %s unreadable: %s", row["bundle_path"], exc)
    return scenes
