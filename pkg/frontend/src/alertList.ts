/** Alert triage table: filters, score-descending rows, pagination. */

import { AlertdClient } from "./api";
import { DEFAULT_FILTERS, FilterState, pushFiltersToUrl } from "./state";
import { Alert } from "./types";

export interface AlertListCallbacks {
  onOpen: (alert: Alert) => void;
}

const FILTER_FIELDS: [keyof FilterState, string, string][] = [
  ["scoreMin", "score ≥", "number"],
  ["scoreMax", "score ≤", "number"],
  ["fluxMin", "flux ≥ (kg/h)", "number"],
  ["fluxMax", "flux ≤ (kg/h)", "number"],
  ["satellite", "satellite", "text"],
  ["country", "country", "text"],
  ["status", "status", "text"],
];

export class AlertList {
  filters: FilterState;
  private lastPage: Alert[] = [];
  private total = 0;

  constructor(
    private root: HTMLElement,
    private client: AlertdClient,
    private callbacks: AlertListCallbacks,
    initial?: FilterState,
    private win: Window = window,
  ) {
    this.filters = { ...(initial ?? DEFAULT_FILTERS) };
  }

  async refresh(): Promise<void> {
    pushFiltersToUrl(this.filters, this.win);
    try {
      const page = await this.client.listAlerts(this.filters);
      this.lastPage = page.alerts;
      this.total = page.total;
      this.render(false);
    } catch {
      // keep the last page visible, read-only, with a retry banner
      this.render(true);
    }
  }

  private setFilter(key: keyof FilterState, raw: string): void {
    if (raw === "") {
      delete (this.filters as any)[key];
    } else if (key === "satellite" || key === "country" || key === "status") {
      (this.filters as any)[key] = raw;
    } else {
      const value = Number(raw);
      if (!Number.isNaN(value)) (this.filters as any)[key] = value;
    }
    this.filters.offset = 0;
    void this.refresh();
  }

  private render(offline: boolean): void {
    this.root.innerHTML = "";
    if (offline) {
      const banner = el("div", "banner error");
      banner.textContent = "API unreachable — showing the last loaded page.";
      const retry = el("button", "retry");
      retry.textContent = "retry";
      retry.addEventListener("click", () => void this.refresh());
      banner.appendChild(retry);
      this.root.appendChild(banner);
    }

    const toolbar = el("div", "filters");
    for (const [key, label, kind] of FILTER_FIELDS) {
      const wrap = el("label", "filter");
      wrap.textContent = label + " ";
      const input = document.createElement("input");
      input.type = kind;
      input.dataset.filter = key;
      if (kind === "number") input.step = "any";
      const current = this.filters[key];
      input.value = current === undefined ? "" : String(current);
      input.addEventListener("change", () => this.setFilter(key, input.value));
      wrap.appendChild(input);
      toolbar.appendChild(wrap);
    }
    this.root.appendChild(toolbar);

    if (this.lastPage.length === 0) {
      const empty = el("div", "empty-state");
      empty.textContent = "No alerts match the current filters.";
      this.root.appendChild(empty);
    } else {
      const table = el("table", "alerts") as HTMLTableElement;
      table.innerHTML =
        "<thead><tr><th>score</th><th>site</th><th>country</th><th>satellite</th>" +
        "<th>flux kg/h</th><th>time</th><th>status</th></tr></thead>";
      const body = document.createElement("tbody");
      for (const alert of this.lastPage) {
        const row = document.createElement("tr");
        row.dataset.alertId = alert.alert_id;
        row.className = offline ? "readonly" : "";
        row.innerHTML =
          `<td>${alert.scene_score.toFixed(3)}</td>` +
          `<td>${alert.site_id}</td>` +
          `<td>${alert.country}</td>` +
          `<td>${alert.satellite}</td>` +
          `<td>${alert.flux_kg_h === null ? "—" : alert.flux_kg_h.toFixed(0)}</td>` +
          `<td>${alert.timestamp}</td>` +
          `<td><span class="badge badge-${alert.status}">${alert.status}</span></td>`;
        if (!offline) {
          row.addEventListener("click", () => this.callbacks.onOpen(alert));
        }
        body.appendChild(row);
      }
      table.appendChild(body);
      this.root.appendChild(table);
    }

    const pager = el("div", "pager");
    const pages = Math.max(1, Math.ceil(this.total / this.filters.limit));
    const current = Math.floor(this.filters.offset / this.filters.limit) + 1;
    pager.textContent = `page ${current}/${pages} — ${this.total} alerts `;
    const prev = el("button", "prev");
    prev.textContent = "prev";
    prev.disabled = this.filters.offset === 0;
    prev.addEventListener("click", () => {
      this.filters.offset = Math.max(0, this.filters.offset - this.filters.limit);
      void this.refresh();
    });
    const next = el("button", "next");
    next.textContent = "next";
    next.disabled = this.filters.offset + this.filters.limit >= this.total;
    next.addEventListener("click", () => {
      this.filters.offset += this.filters.limit;
      void this.refresh();
    });
    pager.append(prev, next);
    this.root.appendChild(pager);
  }
}

function el(tag: string, className: string): HTMLElement & { disabled?: boolean } {
  const node = document.createElement(tag) as HTMLElement & { disabled?: boolean };
  node.className = className;
  return node;
}
