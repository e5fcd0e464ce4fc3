/** View-model for the direction panel: one slider row per discovered
 * direction, eigenvalue magnitudes as relative bars, grouped by layer range. */
import type { DirectionsResponse } from "./api.js";

export interface DirectionRow {
  id: string;
  index: number;
  eigenvalue: number;
  /** Bar length in [0,1], relative to the strongest eigenvalue. */
  bar: number;
}

export interface PanelModel {
  layerRange: string;
  space: string;
  rows: DirectionRow[];
  empty: boolean;
}

export function buildPanelModel(resp: DirectionsResponse | null): PanelModel {
  if (!resp || resp.k === 0) {
    return { layerRange: resp?.layer_range ?? "", space: resp?.space ?? "", rows: [], empty: true };
  }
  const top = Math.max(...resp.eigenvalues.map(Math.abs), 1e-30);
  const rows = resp.direction_ids.map((id, i) => ({
    id,
    index: i,
    eigenvalue: resp.eigenvalues[i],
    bar: Math.abs(resp.eigenvalues[i]) / top,
  }));
  return { layerRange: resp.layer_range, space: resp.space, rows, empty: false };
}

/** Rows must arrive strongest-first; guards against a misbehaving server. */
export function eigenvaluesDescending(model: PanelModel): boolean {
  const e = model.rows.map((r) => r.eigenvalue);
  return e.every((v, i) => i === 0 || e[i - 1] >= v);
}
