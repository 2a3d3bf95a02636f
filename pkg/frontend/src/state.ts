/** Filter state <-> URL round trip, so any view is a shareable link. */

export interface FilterState {
  scoreMin?: number;
  scoreMax?: number;
  fluxMin?: number;
  fluxMax?: number;
  satellite?: string;
  country?: string;
  status?: string;
  limit: number;
  offset: number;
}

export const DEFAULT_FILTERS: FilterState = { limit: 50, offset: 0 };

const NUMERIC: (keyof FilterState)[] = ["scoreMin", "scoreMax", "fluxMin", "fluxMax"];

/** Query-parameter names as the API expects them. */
const PARAM_NAMES: Record<string, string> = {
  scoreMin: "score_min",
  scoreMax: "score_max",
  fluxMin: "flux_min",
  fluxMax: "flux_max",
  satellite: "satellite",
  country: "country",
  status: "status",
  limit: "limit",
  offset: "offset",
};

export function filtersToParams(filters: FilterState): URLSearchParams {
  const params = new URLSearchParams();
  for (const [key, param] of Object.entries(PARAM_NAMES)) {
    const value = filters[key as keyof FilterState];
    if (value === undefined || value === "" || value === null) continue;
    if (key === "limit" && value === DEFAULT_FILTERS.limit) continue;
    if (key === "offset" && value === 0) continue;
    params.set(param, String(value));
  }
  return params;
}

export function filtersFromParams(params: URLSearchParams): FilterState {
  const filters: FilterState = { ...DEFAULT_FILTERS };
  for (const [key, param] of Object.entries(PARAM_NAMES)) {
    const raw = params.get(param);
    if (raw === null || raw === "") continue;
    if (key === "limit" || key === "offset" || NUMERIC.includes(key as keyof FilterState)) {
      const parsed = Number(raw);
      if (!Number.isNaN(parsed)) (filters as any)[key] = parsed;
    } else {
      (filters as any)[key] = raw;
    }
  }
  return filters;
}

/** Reflect the filters into the address bar without a navigation. */
export function pushFiltersToUrl(filters: FilterState, win: Window = window): void {
  const params = filtersToParams(filters);
  const query = params.toString();
  const url = win.location.pathname + (query ? "?" + query : "");
  win.history.replaceState(null, "", url);
}

export function readFiltersFromUrl(win: Window = window): FilterState {
  return filtersFromParams(new URLSearchParams(win.location.search));
}
