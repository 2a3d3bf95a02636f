"""Daemon wiring: config file, scheduled ingest thread, API server."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

from ..detector import load_model
from ..raster import load_site_registry
from ..rtlut import load_lut
from .ingest import IngestDeferred, IngestJob, run_ingest
from .store import AlertStore

log = logging.getLogger("plumewatch.alertd")


@dataclass
class ServiceConfig:
    data_root: Path
    registry: Path
    model: Path
    lut: Path
    db_path: Path
    host: str = "127.0.0.1"
    port: int = 8080
    schedule_utc: str = "06:30"
    expected_crop_m: float | None = 2000.0

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text())
        data_root = Path(os.environ.get("ALERTD_DATA_ROOT", raw["data_root"]))
        return cls(
            data_root=data_root,
            registry=Path(raw["registry"]),
            model=Path(raw["model"]),
            lut=Path(raw["lut"]),
            db_path=Path(raw.get("db_path", data_root / "alertd.sqlite")),
            host=raw.get("host", "127.0.0.1"),
            port=int(raw.get("port", 8080)),
            schedule_utc=raw.get("schedule_utc", "06:30"),
            expected_crop_m=raw.get("expected_crop_m", 2000.0),
        )


def next_run_at(now: datetime, schedule_utc: str) -> datetime:
    """The next wall-clock occurrence of the daily HH:MM UTC schedule."""
    hour, minute = (int(x) for x in schedule_utc.split(":"))
    candidate = now.replace(hour=hour, minute=minute, second=0, microsecond=0)
    if candidate <= now:
        candidate += timedelta(days=1)
    return candidate


class IngestScheduler(threading.Thread):
    """Runs one ingest pass at the configured time every day."""

    def __init__(self, config: ServiceConfig, store: AlertStore):
        super().__init__(daemon=True, name="alertd-ingest")
        self.config = config
        self.store = store
        self._stop = threading.Event()

    def run(self):
        while not self._stop.is_set():
            now = datetime.now(timezone.utc)
            wake = next_run_at(now, self.config.schedule_utc)
            wait_s = (wake - now).total_seconds()
            if self._stop.wait(timeout=wait_s):
                return
            try:
                alerts = ingest_once(self.config, self.store)
                log.info("scheduled ingest: %d new alerts", len(alerts))
            except IngestDeferred as exc:
                log.warning("ingest deferred: %s (retry in %.0fs)", exc, exc.retry_after_s)
                self._stop.wait(timeout=exc.retry_after_s)
            except Exception:
                log.exception("scheduled ingest failed")

    def stop(self):
        self._stop.set()


def ingest_once(config: ServiceConfig, store: AlertStore | None = None):
    store = store or AlertStore(config.db_path)
    registry = load_site_registry(config.registry)
    model = load_model(config.model)
    lut = load_lut(config.lut)
    job = IngestJob(
        data_root=config.data_root,
        schedule_utc=config.schedule_utc,
        expected_crop_m=config.expected_crop_m,
    )
    return run_ingest(job, store, registry, model, lut)


def serve(config: ServiceConfig):
    import uvicorn

    from .api import create_app

    store = AlertStore(config.db_path)
    job = IngestJob(data_root=config.data_root, schedule_utc=config.schedule_utc,
                    expected_crop_m=config.expected_crop_m)
    scheduler = IngestScheduler(config, store)
    scheduler.start()
    app = create_app(store, job)
    try:
        uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    finally:
        scheduler.stop()
