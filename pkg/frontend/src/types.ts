/** Wire types mirroring the alertd JSON API. */

export interface Alert {
  alert_id: string;
  site_id: string;
  scene_id: string;
  timestamp: string;
  scene_score: number;
  flux_kg_h: number | null;
  flux_uncertainty_kg_h: number | null;
  ime_kg: number | null;
  country: string;
  satellite: string;
  status: AlertStatus;
  reviewer: string | null;
  note: string | null;
  version: number;
  model_version: string;
  created_at: string;
}

export type AlertStatus = "new" | "inspecting" | "validated" | "rejected" | "notified";

export interface AlertPage {
  alerts: Alert[];
  total: number;
  limit: number;
  offset: number;
}

export interface AuditEntry {
  id: number;
  alert_id: string;
  from_status: string;
  to_status: string;
  reviewer: string | null;
  note: string | null;
  at: string;
}

export interface AlertDetail {
  alert: Alert;
  audit: AuditEntry[];
}

export type Layer = "rgb" | "mbmp" | "dch4" | "prob" | "mask";

export const LAYERS: Layer[] = ["rgb", "mbmp", "dch4", "prob", "mask"];

export interface TransitionRequest {
  status: AlertStatus;
  reviewer: string;
  note?: string;
  version?: number;
  edited_mask?: number[][];
}
