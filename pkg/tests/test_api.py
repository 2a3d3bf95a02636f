import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from plumewatch import synth
from plumewatch.alertd import AlertStore, IngestJob, run_ingest
from plumewatch.alertd.api import create_app
from plumewatch.detector import DetectorModel, ModelConfig


@pytest.fixture(scope="module")
def service(tmp_path_factory, lut):
    """Ingested fixture day behind a live TestClient."""
    root = tmp_path_factory.mktemp("alertd")
    registry, _ = synth.write_fixture_history(root)
    expected = synth.write_fixture_scan_day(root, lut)
    torch.manual_seed(8)
    model = DetectorModel(ModelConfig(widths=(4, 8, 16, 32)))
    store = AlertStore(root / "db.sqlite")
    job = IngestJob(data_root=root, expected_crop_m=None)
    alerts = run_ingest(job, store, registry, model, lut)
    client = TestClient(create_app(store, job))
    return client, store, alerts, expected


def test_alert_list_default_ordering(service):
    client, _, alerts, _ = service
    response = client.get("/alerts")
    assert response.status_code == 200
    body = response.json()
    assert body["total"] == len(alerts)
    scores = [a["scene_score"] for a in body["alerts"]]
    assert scores == sorted(scores, reverse=True)


def test_alert_list_filters_are_conjunctive(service):
    client, _, _, _ = service
    response = client.get("/alerts", params={"country": "Offshoria", "satellite": "S2A",
                                             "score_min": 0.0})
    body = response.json()
    assert all(a["country"] == "Offshoria" and a["satellite"] == "S2A"
               for a in body["alerts"])
    none = client.get("/alerts", params={"country": "Offshoria", "satellite": "L9"}).json()
    assert none["total"] == 0


def test_alert_list_pagination_beyond_end(service):
    client, _, alerts, _ = service
    body = client.get("/alerts", params={"offset": 1000}).json()
    assert body["alerts"] == []
    assert body["total"] == len(alerts)


def test_alert_detail_and_missing(service):
    client, _, alerts, _ = service
    ok = client.get(f"/alerts/{alerts[0].alert_id}")
    assert ok.status_code == 200
    assert ok.json()["alert"]["alert_id"] == alerts[0].alert_id
    assert client.get("/alerts/a-nope").status_code == 404


def test_malformed_filter_rejected(service):
    client, _, _, _ = service
    assert client.get("/alerts", params={"score_min": "high"}).status_code == 422


def test_transition_flow_and_conflict(service):
    client, _, alerts, _ = service
    alert_id = alerts[-1].alert_id
    ok = client.post(f"/alerts/{alert_id}/transition",
                     json={"status": "inspecting", "reviewer": "ana", "version": 0})
    assert ok.status_code == 200
    assert ok.json()["alert"]["status"] == "inspecting"
    stale = client.post(f"/alerts/{alert_id}/transition",
                        json={"status": "validated", "reviewer": "bob", "version": 0})
    assert stale.status_code == 409
    illegal = client.post(f"/alerts/{alert_id}/transition",
                          json={"status": "notified", "reviewer": "ana"})
    assert illegal.status_code == 400


def test_layer_endpoints_return_png(service):
    client, _, _, expected = service
    scene_id = expected["plume_scene"]
    for layer in ("rgb", "mbmp", "dch4", "prob", "mask"):
        response = client.get(f"/scenes/{scene_id}/layers/{layer}")
        assert response.status_code == 200, layer
        assert response.headers["content-type"] == "image/png"
        assert response.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert client.get(f"/scenes/{scene_id}/layers/thermal").status_code == 400
    assert client.get("/scenes/ghost:20240101T000000/layers/prob").status_code == 404


def test_sites_endpoint(service):
    client, _, _, _ = service
    body = client.get("/sites").json()
    ids = {s["site_id"] for s in body["sites"]}
    assert {"fixture_a", "fixture_b"} <= ids


def test_edited_mask_requantifies_flux(service):
    client, store, alerts, expected = service
    plume_alert = next(a for a in alerts if a.scene_id == expected["plume_scene"])
    with np.load(store.prediction_row(plume_alert.scene_id)["raster_path"]) as data:
        dch4 = data["dch4"]
    edited = (np.nan_to_num(dch4, nan=0.0) >= 500).astype(int).tolist()
    response = client.post(
        f"/alerts/{plume_alert.alert_id}/transition",
        json={"status": "inspecting", "reviewer": "ana", "edited_mask": edited},
    )
    assert response.status_code == 200
    updated = response.json()["alert"]
    assert updated["flux_kg_h"] is not None and updated["flux_kg_h"] > 0
    # mask echoed back by the server equals the submitted annotation
    echoed = client.get(f"/scenes/{plume_alert.scene_id}/mask").json()["mask"]
    assert echoed == edited


def test_export_endpoint_csv(service):
    client, store, alerts, _ = service
    target = next(a for a in alerts if store.get_alert(a.alert_id).status == "new")
    store.transition_alert(target.alert_id, "inspecting", "ana")
    store.transition_alert(target.alert_id, "validated", "ana")
    response = client.get("/export", params={"from": "2020-01-01", "to": "2030-01-01"})
    assert response.status_code == 200
    lines = response.text.strip().splitlines()
    assert lines[0].startswith("site_id,timestamp,flux_kg_h")
    assert any(target.site_id in line for line in lines[1:])
