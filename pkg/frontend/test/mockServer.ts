/** In-memory alertd implementing the HTTP contract behind a fetch stub. */

import { Alert, AlertStatus } from "../src/types";

const LEGAL: Record<AlertStatus, AlertStatus[]> = {
  new: ["inspecting"],
  inspecting: ["validated", "rejected"],
  validated: ["notified"],
  rejected: [],
  notified: [],
};

export interface MockState {
  alerts: Alert[];
  masks: Record<string, number[][]>;
  audit: { alert_id: string; from_status: string; to_status: string; at: string }[];
  requests: { method: string; url: string; body?: unknown }[];
}

export function makeAlert(overrides: Partial<Alert>): Alert {
  return {
    alert_id: "a-" + Math.random().toString(36).slice(2, 10),
    site_id: "site_a",
    scene_id: "site_a:20240101T060000",
    timestamp: "2024-01-01T06:00:00",
    scene_score: 0.5,
    flux_kg_h: 1000,
    flux_uncertainty_kg_h: 300,
    ime_kg: 40,
    country: "Synthland",
    satellite: "S2A",
    status: "new",
    reviewer: null,
    note: null,
    version: 0,
    model_version: "1",
    created_at: "2024-01-01T07:00:00",
    ...overrides,
  };
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export function installMockAlertd(alerts: Alert[], masks?: Record<string, number[][]>): MockState {
  const state: MockState = {
    alerts: alerts.map((a) => ({ ...a })),
    masks: masks ?? {},
    audit: [],
    requests: [],
  };

  const handler = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = new URL(String(input), "http://mock");
    const method = (init?.method ?? "GET").toUpperCase();
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    state.requests.push({ method, url: url.pathname + url.search, body });

    const layerMatch = url.pathname.match(/^\/scenes\/([^/]+)\/layers\/([^/]+)$/);
    if (layerMatch) {
      const [, , layer] = layerMatch;
      if (!["rgb", "mbmp", "dch4", "prob", "mask"].includes(layer)) {
        return json({ detail: "unknown layer" }, 400);
      }
      return new Response(new Uint8Array([0x89, 0x50, 0x4e, 0x47]), {
        status: 200,
        headers: { "content-type": "image/png" },
      });
    }

    const maskMatch = url.pathname.match(/^\/scenes\/([^/]+)\/mask$/);
    if (maskMatch) {
      const sceneId = decodeURIComponent(maskMatch[1]);
      const mask = state.masks[sceneId] ?? [[0]];
      return json({ scene_id: sceneId, mask });
    }

    const transitionMatch = url.pathname.match(/^\/alerts\/([^/]+)\/transition$/);
    if (transitionMatch && method === "POST") {
      const alert = state.alerts.find((a) => a.alert_id === transitionMatch[1]);
      if (!alert) return json({ detail: "not found" }, 404);
      const expected = body.version ?? alert.version;
      if (expected !== alert.version) {
        return json({ detail: "version conflict" }, 409);
      }
      if (!LEGAL[alert.status].includes(body.status)) {
        return json({ detail: `illegal ${alert.status} -> ${body.status}` }, 400);
      }
      if (body.edited_mask) {
        state.masks[alert.scene_id] = body.edited_mask;
        const pixels = body.edited_mask.flat().filter((v: number) => v).length;
        alert.flux_kg_h = pixels * 10; // stand-in requantification
        alert.ime_kg = pixels;
      }
      state.audit.push({
        alert_id: alert.alert_id,
        from_status: alert.status,
        to_status: body.status,
        at: new Date().toISOString(),
      });
      alert.status = body.status;
      alert.version += 1;
      alert.reviewer = body.reviewer;
      return json({ alert, audit: state.audit.filter((e) => e.alert_id === alert.alert_id) });
    }

    const detailMatch = url.pathname.match(/^\/alerts\/([^/]+)$/);
    if (detailMatch) {
      const alert = state.alerts.find((a) => a.alert_id === detailMatch[1]);
      if (!alert) return json({ detail: "not found" }, 404);
      return json({ alert, audit: state.audit.filter((e) => e.alert_id === alert.alert_id) });
    }

    if (url.pathname === "/alerts") {
      let rows = [...state.alerts];
      const p = url.searchParams;
      const num = (name: string) => (p.has(name) ? Number(p.get(name)) : undefined);
      const scoreMin = num("score_min");
      const scoreMax = num("score_max");
      const fluxMin = num("flux_min");
      const fluxMax = num("flux_max");
      if (scoreMin !== undefined) rows = rows.filter((a) => a.scene_score >= scoreMin);
      if (scoreMax !== undefined) rows = rows.filter((a) => a.scene_score <= scoreMax);
      if (fluxMin !== undefined) rows = rows.filter((a) => (a.flux_kg_h ?? -1) >= fluxMin);
      if (fluxMax !== undefined) rows = rows.filter((a) => (a.flux_kg_h ?? Infinity) <= fluxMax);
      for (const key of ["satellite", "country", "status", "site_id"] as const) {
        const value = p.get(key);
        if (value) rows = rows.filter((a) => (a as any)[key] === value);
      }
      rows.sort((x, y) => y.scene_score - x.scene_score || y.timestamp.localeCompare(x.timestamp));
      const limit = num("limit") ?? 50;
      const offset = num("offset") ?? 0;
      return json({
        alerts: rows.slice(offset, offset + limit),
        total: rows.length,
        limit,
        offset,
      });
    }

    return json({ detail: `unhandled ${method} ${url.pathname}` }, 404);
  };

  (globalThis as any).fetch = handler;
  return state;
}
