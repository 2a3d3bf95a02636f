"""Embedded relational store for scenes, predictions, alerts and audit.

Single-file SQLite with a documented schema; every public method opens a
short-lived connection so the store is safe to share across API threads and
the ingest worker. Alert review follows a fixed status machine

    new -> inspecting -> {validated, rejected},  validated -> notified

guarded by optimistic versioning: a transition names the version it saw and
loses with ConflictError if another writer got there first. Every
successful transition appends one audit row.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass
from datetime import datetime, timezone
from hashlib import sha1


class StoreError(Exception):
    pass


class NotFound(StoreError):
    pass


class TransitionError(StoreError):
    pass


class ConflictError(StoreError):
    pass


LEGAL_TRANSITIONS: dict[str, frozenset[str]] = {
    "new": frozenset({"inspecting"}),
    "inspecting": frozenset({"validated", "rejected"}),
    "validated": frozenset({"notified"}),
    "rejected": frozenset(),
    "notified": frozenset(),
}

EXPORTABLE_STATUSES = ("validated", "notified")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS sites (
    site_id TEXT PRIMARY KEY,
    lon REAL NOT NULL,
    lat REAL NOT NULL,
    country TEXT NOT NULL,
    sector TEXT NOT NULL,
    offshore INTEGER NOT NULL,
    active INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS scenes (
    scene_id TEXT PRIMARY KEY,
    site_id TEXT NOT NULL,
    satellite TEXT NOT NULL,
    timestamp TEXT NOT NULL,
    bundle_path TEXT NOT NULL,
    status TEXT NOT NULL,          -- processed | rejected_validity | failed
    fraction_cloud REAL,
    fraction_shadow REAL,
    fraction_missing REAL,
    failure TEXT
);
CREATE TABLE IF NOT EXISTS predictions (
    scene_id TEXT PRIMARY KEY,
    model_version TEXT NOT NULL,
    film_bank TEXT NOT NULL,
    scene_score REAL NOT NULL,
    pixel_threshold REAL NOT NULL,
    min_blob_px INTEGER NOT NULL,
    retrieval_kind TEXT NOT NULL,
    raster_path TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS alerts (
    alert_id TEXT PRIMARY KEY,
    site_id TEXT NOT NULL,
    scene_id TEXT NOT NULL UNIQUE,
    timestamp TEXT NOT NULL,
    scene_score REAL NOT NULL,
    flux_kg_h REAL,
    flux_uncertainty_kg_h REAL,
    ime_kg REAL,
    country TEXT NOT NULL,
    satellite TEXT NOT NULL,
    status TEXT NOT NULL,
    reviewer TEXT,
    note TEXT,
    version INTEGER NOT NULL DEFAULT 0,
    model_version TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS audit (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    alert_id TEXT NOT NULL,
    from_status TEXT NOT NULL,
    to_status TEXT NOT NULL,
    reviewer TEXT,
    note TEXT,
    at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS watermarks (
    site_id TEXT PRIMARY KEY,
    last_processed TEXT NOT NULL
);
"""


@dataclass
class Alert:
    alert_id: str
    site_id: str
    scene_id: str
    timestamp: str
    scene_score: float
    flux_kg_h: float | None
    flux_uncertainty_kg_h: float | None
    ime_kg: float | None
    country: str
    satellite: str
    status: str
    reviewer: str | None
    note: str | None
    version: int
    model_version: str
    created_at: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def alert_id_for_scene(scene_id: str) -> str:
    return "a-" + sha1(scene_id.encode()).hexdigest()[:12]


class AlertStore:
    def __init__(self, path):
        self.path = str(path)
        with self._connect() as conn:
            conn.executescript(_SCHEMA)

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.path, timeout=30.0)
        conn.row_factory = sqlite3.Row
        conn.execute("PRAGMA journal_mode=WAL")
        return conn

    # -- sites ------------------------------------------------------------

    def upsert_sites(self, records) -> None:
        with self._connect() as conn:
            conn.executemany(
                "INSERT INTO sites VALUES (?,?,?,?,?,?,?) "
                "ON CONFLICT(site_id) DO UPDATE SET lon=excluded.lon, lat=excluded.lat, "
                "country=excluded.country, sector=excluded.sector, "
                "offshore=excluded.offshore, active=excluded.active",
                [(r.site_id, r.lon, r.lat, r.country, r.sector,
                  int(r.offshore), int(r.active)) for r in records],
            )

    def sites(self) -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute("SELECT * FROM sites ORDER BY site_id").fetchall()
        return [dict(r) for r in rows]

    # -- scenes and predictions -------------------------------------------

    def scene_known(self, scene_id: str) -> bool:
        with self._connect() as conn:
            row = conn.execute("SELECT 1 FROM scenes WHERE scene_id=?", (scene_id,)).fetchone()
        return row is not None

    def record_scene(self, scene_id, site_id, satellite, timestamp, bundle_path,
                     status, report=None, failure=None) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO scenes VALUES (?,?,?,?,?,?,?,?,?,?)",
                (scene_id, site_id, satellite, timestamp, str(bundle_path), status,
                 report.fraction_cloud if report else None,
                 report.fraction_shadow if report else None,
                 report.fraction_missing if report else None,
                 failure),
            )

    def scenes_for_site(self, site_id: str, status: str = "processed") -> list[dict]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM scenes WHERE site_id=? AND status=? ORDER BY timestamp",
                (site_id, status),
            ).fetchall()
        return [dict(r) for r in rows]

    def scene_row(self, scene_id: str) -> dict:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM scenes WHERE scene_id=?", (scene_id,)).fetchone()
        if row is None:
            raise NotFound(f"scene {scene_id}")
        return dict(row)

    def record_prediction(self, scene_id, model_version, film_bank, scene_score,
                          pixel_threshold, min_blob_px, retrieval_kind, raster_path) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO predictions VALUES (?,?,?,?,?,?,?,?,?)",
                (scene_id, model_version, film_bank, scene_score, pixel_threshold,
                 min_blob_px, retrieval_kind, str(raster_path), _now()),
            )

    def prediction_row(self, scene_id: str) -> dict:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM predictions WHERE scene_id=?", (scene_id,)
            ).fetchone()
        if row is None:
            raise NotFound(f"prediction for scene {scene_id}")
        return dict(row)

    # -- alerts -----------------------------------------------------------

    def create_alert(self, *, site_id, scene_id, timestamp, scene_score, country,
                     satellite, model_version, flux_kg_h=None,
                     flux_uncertainty_kg_h=None, ime_kg=None) -> Alert:
        alert_id = alert_id_for_scene(scene_id)
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO alerts (alert_id, site_id, scene_id, timestamp, scene_score,"
                " flux_kg_h, flux_uncertainty_kg_h, ime_kg, country, satellite, status,"
                " reviewer, note, version, model_version, created_at)"
                " VALUES (?,?,?,?,?,?,?,?,?,?,'new',NULL,NULL,0,?,?)",
                (alert_id, site_id, scene_id, timestamp, scene_score, flux_kg_h,
                 flux_uncertainty_kg_h, ime_kg, country, satellite, model_version, _now()),
            )
        return self.get_alert(alert_id)

    def get_alert(self, alert_id: str) -> Alert:
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM alerts WHERE alert_id=?", (alert_id,)).fetchone()
        if row is None:
            raise NotFound(f"alert {alert_id}")
        return Alert(**dict(row))

    def list_alerts(
        self,
        score_min: float | None = None,
        score_max: float | None = None,
        flux_min: float | None = None,
        flux_max: float | None = None,
        satellite: str | None = None,
        country: str | None = None,
        status: str | None = None,
        site_id: str | None = None,
        limit: int = 50,
        offset: int = 0,
    ) -> tuple[list[Alert], int]:
        """Filtered page, score-descending then timestamp-descending."""
        clauses, params = [], []
        for clause, value in (
            ("scene_score >= ?", score_min),
            ("scene_score <= ?", score_max),
            ("flux_kg_h >= ?", flux_min),
            ("flux_kg_h <= ?", flux_max),
            ("satellite = ?", satellite),
            ("country = ?", country),
            ("status = ?", status),
            ("site_id = ?", site_id),
        ):
            if value is not None:
                clauses.append(clause)
                params.append(value)
        where = (" WHERE " + " AND ".join(clauses)) if clauses else ""
        with self._connect() as conn:
            total = conn.execute(f"SELECT COUNT(*) FROM alerts{where}", params).fetchone()[0]
            rows = conn.execute(
                f"SELECT * FROM alerts{where} ORDER BY scene_score DESC, timestamp DESC"
                " LIMIT ? OFFSET ?",
                (*params, limit, offset),
            ).fetchall()
        return [Alert(**dict(r)) for r in rows], int(total)

    def transition_alert(self, alert_id: str, new_status: str, reviewer: str,
                         note: str = "", expected_version: int | None = None) -> Alert:
        """Atomically advance the status machine; losers get ConflictError."""
        current = self.get_alert(alert_id)
        if new_status not in LEGAL_TRANSITIONS:
            raise TransitionError(f"unknown status {new_status!r}")
        # Stale writers learn about the conflict before any legality verdict,
        # otherwise a refreshed state would masquerade as an illegal request.
        if expected_version is not None and expected_version != current.version:
            raise ConflictError(
                f"alert {alert_id} at version {current.version}, caller saw {expected_version}"
            )
        if new_status not in LEGAL_TRANSITIONS[current.status]:
            raise TransitionError(f"illegal transition {current.status} -> {new_status}")
        version = current.version if expected_version is None else expected_version
        with self._connect() as conn:
            cursor = conn.execute(
                "UPDATE alerts SET status=?, reviewer=?, note=?, version=version+1"
                " WHERE alert_id=? AND version=? AND status=?",
                (new_status, reviewer, note, alert_id, version, current.status),
            )
            if cursor.rowcount != 1:
                raise ConflictError(
                    f"alert {alert_id} changed concurrently (expected version {version})"
                )
            conn.execute(
                "INSERT INTO audit (alert_id, from_status, to_status, reviewer, note, at)"
                " VALUES (?,?,?,?,?,?)",
                (alert_id, current.status, new_status, reviewer, note, _now()),
            )
        return self.get_alert(alert_id)

    def update_flux(self, alert_id: str, flux_kg_h: float,
                    uncertainty_kg_h: float, ime_kg: float) -> None:
        with self._connect() as conn:
            cursor = conn.execute(
                "UPDATE alerts SET flux_kg_h=?, flux_uncertainty_kg_h=?, ime_kg=?"
                " WHERE alert_id=?",
                (flux_kg_h, uncertainty_kg_h, ime_kg, alert_id),
            )
            if cursor.rowcount != 1:
                raise NotFound(f"alert {alert_id}")

    def audit_log(self, alert_id: str | None = None) -> list[dict]:
        with self._connect() as conn:
            if alert_id is None:
                rows = conn.execute("SELECT * FROM audit ORDER BY id").fetchall()
            else:
                rows = conn.execute(
                    "SELECT * FROM audit WHERE alert_id=? ORDER BY id", (alert_id,)
                ).fetchall()
        return [dict(r) for r in rows]

    def export_public(self, from_ts: str, to_ts: str) -> list[dict]:
        """Validated plus notified alerts in the window, for the public portal."""
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT a.site_id, a.timestamp, a.flux_kg_h, a.flux_uncertainty_kg_h,"
                " a.country, a.satellite, a.status,"
                " (SELECT MAX(at) FROM audit WHERE alert_id=a.alert_id AND to_status='notified')"
                "   AS notified_at"
                " FROM alerts a WHERE a.status IN (?, ?) AND a.timestamp >= ? AND a.timestamp <= ?"
                " ORDER BY a.timestamp",
                (*EXPORTABLE_STATUSES, from_ts, to_ts),
            ).fetchall()
        return [dict(r) for r in rows]

    # -- watermarks ---------------------------------------------------------

    def watermark(self, site_id: str) -> str | None:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT last_processed FROM watermarks WHERE site_id=?", (site_id,)
            ).fetchone()
        return row[0] if row else None

    def set_watermark(self, site_id: str, value: str) -> None:
        with self._connect() as conn:
            conn.execute(
                "INSERT INTO watermarks VALUES (?,?) ON CONFLICT(site_id)"
                " DO UPDATE SET last_processed=excluded.last_processed",
                (site_id, value),
            )
