/** Thin typed client for the alertd HTTP API.
 *
 * Every number the console shows comes through here; the client never
 * recomputes scores or fluxes. Stale-version transitions surface as
 * ConflictError so the caller can roll back its optimistic update.
 */

import { AlertDetail, AlertPage, Layer, TransitionRequest } from "./types";
import { FilterState, filtersToParams } from "./state";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ConflictError extends ApiError {
  constructor(message: string) {
    super(409, message);
  }
}

export class AlertdClient {
  constructor(private base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, init);
    if (!response.ok) {
      const body = await response.text();
      if (response.status === 409) throw new ConflictError(body);
      throw new ApiError(response.status, body);
    }
    return (await response.json()) as T;
  }

  listAlerts(filters: FilterState): Promise<AlertPage> {
    const params = filtersToParams(filters);
    const query = params.toString();
    return this.request<AlertPage>("/alerts" + (query ? "?" + query : ""));
  }

  getAlert(alertId: string): Promise<AlertDetail> {
    return this.request<AlertDetail>(`/alerts/${alertId}`);
  }

  siteHistory(siteId: string, limit = 20): Promise<AlertPage> {
    return this.request<AlertPage>(`/alerts?site_id=${encodeURIComponent(siteId)}&limit=${limit}`);
  }

  transition(alertId: string, body: TransitionRequest): Promise<AlertDetail> {
    return this.request<AlertDetail>(`/alerts/${alertId}/transition`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  layerUrl(sceneId: string, layer: Layer): string {
    return `${this.base}/scenes/${encodeURIComponent(sceneId)}/layers/${layer}`;
  }

  /** Fetch the layer tile (also warms the browser cache for the <img>). */
  async fetchLayer(sceneId: string, layer: Layer): Promise<void> {
    const response = await fetch(this.layerUrl(sceneId, layer));
    if (!response.ok) throw new ApiError(response.status, `layer ${layer} unavailable`);
  }

  sceneMask(sceneId: string): Promise<{ scene_id: string; mask: number[][] }> {
    return this.request(`/scenes/${encodeURIComponent(sceneId)}/mask`);
  }

  exportUrl(from: string, to: string): string {
    return `${this.base}/export?from=${encodeURIComponent(from)}&to=${encodeURIComponent(to)}`;
  }
}
