/** Scene inspector: layer toggles, overpass history, flux panel, mask brush.
 *
 * Layer toggles only swap which tile is displayed; the underlying data is
 * never mutated. Mask edits stay local until the analyst submits a decision,
 * at which point the server requantifies and the flux panel refreshes from
 * the response.
 */

import { AlertdClient, ConflictError } from "./api";
import { Alert, AlertStatus, LAYERS, Layer } from "./types";

export interface InspectorCallbacks {
  onClose: () => void;
  onChanged: (alert: Alert) => void;
}

export class SceneInspector {
  activeLayer: Layer = "rgb";
  opacity = 1.0;
  private editedMask: number[][] | null = null;
  private maskDirty = false;
  private alert: Alert;

  constructor(
    private root: HTMLElement,
    private client: AlertdClient,
    alert: Alert,
    private callbacks: InspectorCallbacks,
    private reviewer: string = "analyst",
  ) {
    this.alert = alert;
  }

  async open(): Promise<void> {
    this.renderSkeleton();
    await this.showLayer("rgb");
    await Promise.all([this.loadHistory(), this.loadMask()]);
  }

  private q<T extends HTMLElement>(selector: string): T {
    return this.root.querySelector(selector) as T;
  }

  private renderSkeleton(): void {
    const a = this.alert;
    this.root.innerHTML = `
      <div class="inspector" data-alert-id="${a.alert_id}">
        <button class="close">back to alerts</button>
        <h2>${a.site_id} — ${a.timestamp}</h2>
        <div class="layer-bar">
          ${LAYERS.map((l) => `<button class="layer-btn" data-layer="${l}">${l}</button>`).join("")}
          <label>opacity <input class="opacity" type="range" min="0" max="1" step="0.05" value="1"></label>
        </div>
        <div class="viewport">
          <img class="layer-image" alt="scene layer">
          <canvas class="mask-editor"></canvas>
        </div>
        <div class="flux-panel"></div>
        <div class="status-panel">
          <span class="badge status">${a.status}</span>
          <button class="act inspect">inspect</button>
          <button class="act validate">validate</button>
          <button class="act reject">reject</button>
          <button class="act notify">notify</button>
          <span class="conflict-note" hidden>Alert changed elsewhere — view refreshed, please retry.</span>
        </div>
        <div class="history"><h3>overpass history</h3><ol class="history-strip"></ol></div>
      </div>`;
    this.q<HTMLButtonElement>(".close").addEventListener("click", this.callbacks.onClose);
    for (const button of this.root.querySelectorAll<HTMLButtonElement>(".layer-btn")) {
      button.addEventListener("click", () => void this.showLayer(button.dataset.layer as Layer));
    }
    this.q<HTMLInputElement>(".opacity").addEventListener("input", (event) => {
      this.opacity = Number((event.target as HTMLInputElement).value);
      this.q<HTMLImageElement>(".layer-image").style.opacity = String(this.opacity);
    });
    this.q<HTMLButtonElement>(".inspect").addEventListener("click", () => void this.transition("inspecting"));
    this.q<HTMLButtonElement>(".validate").addEventListener("click", () => void this.transition("validated"));
    this.q<HTMLButtonElement>(".reject").addEventListener("click", () => void this.transition("rejected"));
    this.q<HTMLButtonElement>(".notify").addEventListener("click", () => void this.transition("notified"));
    this.renderFlux();
  }

  async showLayer(layer: Layer): Promise<void> {
    this.activeLayer = layer;
    for (const button of this.root.querySelectorAll<HTMLButtonElement>(".layer-btn")) {
      button.classList.toggle("active", button.dataset.layer === layer);
    }
    const image = this.q<HTMLImageElement>(".layer-image");
    try {
      await this.client.fetchLayer(this.alert.scene_id, layer);
      image.src = this.client.layerUrl(this.alert.scene_id, layer);
      image.alt = `${layer} layer`;
    } catch {
      image.removeAttribute("src");
      image.alt = `${layer} unavailable`;
    }
  }

  private renderFlux(): void {
    const panel = this.q<HTMLDivElement>(".flux-panel");
    const a = this.alert;
    if (a.flux_kg_h === null) {
      panel.textContent = "flux: not quantified (no plume mask)";
    } else {
      const uncertainty = a.flux_uncertainty_kg_h ?? 0;
      panel.textContent =
        `flux: ${a.flux_kg_h.toFixed(1)} ± ${uncertainty.toFixed(1)} kg/h` +
        (a.ime_kg === null ? "" : ` (IME ${a.ime_kg.toFixed(1)} kg)`);
    }
  }

  private async loadHistory(): Promise<void> {
    const strip = this.q<HTMLOListElement>(".history-strip");
    const page = await this.client.siteHistory(this.alert.site_id);
    const ordered = [...page.alerts].sort((x, y) => x.timestamp.localeCompare(y.timestamp));
    strip.innerHTML = "";
    for (const prior of ordered) {
      const item = document.createElement("li");
      item.dataset.alertId = prior.alert_id;
      item.textContent = `${prior.timestamp} score ${prior.scene_score.toFixed(2)} [${prior.status}]`;
      if (prior.alert_id === this.alert.alert_id) item.classList.add("current");
      strip.appendChild(item);
    }
  }

  private async loadMask(): Promise<void> {
    const canvas = this.q<HTMLCanvasElement>(".mask-editor");
    const { mask } = await this.client.sceneMask(this.alert.scene_id);
    this.editedMask = mask.map((row) => [...row]);
    canvas.height = mask.length;
    canvas.width = mask[0]?.length ?? 0;
    canvas.addEventListener("click", (event) => this.paint(event));
    this.drawMask();
  }

  /** Pixel brush: toggle the clicked cell (native 10 m resolution). */
  private paint(event: MouseEvent): void {
    if (!this.editedMask) return;
    const canvas = this.q<HTMLCanvasElement>(".mask-editor");
    const rect = canvas.getBoundingClientRect();
    const scaleX = canvas.width / (rect.width || canvas.width);
    const scaleY = canvas.height / (rect.height || canvas.height);
    const col = Math.floor((event.clientX - rect.left) * scaleX);
    const row = Math.floor((event.clientY - rect.top) * scaleY);
    if (row < 0 || row >= this.editedMask.length) return;
    if (col < 0 || col >= this.editedMask[0].length) return;
    this.editedMask[row][col] = this.editedMask[row][col] ? 0 : 1;
    this.maskDirty = true;
    this.drawMask();
  }

  private drawMask(): void {
    const canvas = this.q<HTMLCanvasElement>(".mask-editor");
    const context = canvas.getContext("2d");
    if (!context || !this.editedMask) return;
    context.clearRect(0, 0, canvas.width, canvas.height);
    context.fillStyle = "rgba(255, 64, 64, 0.6)";
    this.editedMask.forEach((rowValues, row) => {
      rowValues.forEach((value, col) => {
        if (value) context.fillRect(col, row, 1, 1);
      });
    });
  }

  get currentMask(): number[][] | null {
    return this.editedMask;
  }

  /** Optimistic transition; rolls back and prompts refresh on conflict. */
  async transition(status: AlertStatus): Promise<void> {
    const badge = this.q<HTMLSpanElement>(".badge.status");
    const previous = this.alert.status;
    badge.textContent = status;
    try {
      const detail = await this.client.transition(this.alert.alert_id, {
        status,
        reviewer: this.reviewer,
        version: this.alert.version,
        edited_mask: this.maskDirty && this.editedMask ? this.editedMask : undefined,
      });
      this.alert = detail.alert;
      this.maskDirty = false;
      badge.textContent = this.alert.status;
      this.renderFlux();
      this.callbacks.onChanged(this.alert);
    } catch (error) {
      badge.textContent = previous;
      if (error instanceof ConflictError) {
        const note = this.q<HTMLSpanElement>(".conflict-note");
        note.hidden = false;
        const detail = await this.client.getAlert(this.alert.alert_id);
        this.alert = detail.alert;
        badge.textContent = this.alert.status;
        this.renderFlux();
      } else {
        throw error;
      }
    }
  }
}
