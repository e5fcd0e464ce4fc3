/** View-model for the style-mixing grid: source-A rows x source-B columns,
 * each cell mixed at the selected crossover range. */
import type { ApiClient } from "./api.js";

export interface MixSource {
  seed: number;
  cls: number;
}

export interface GridCell {
  a: MixSource;
  b: MixSource;
  png: string;
}

export interface GridModel {
  range: string;
  aSources: MixSource[];
  bSources: MixSource[];
  aPngs: string[];
  bPngs: string[];
  cells: GridCell[][]; // [row over A][col over B]
}

export async function buildMixGrid(
  api: ApiClient,
  aSources: MixSource[],
  bSources: MixSource[],
  range: string,
): Promise<GridModel> {
  const aPngs = await Promise.all(
    aSources.map(async (s) => (await api.generate({ class: s.cls, seed: s.seed })).png),
  );
  const bPngs = await Promise.all(
    bSources.map(async (s) => (await api.generate({ class: s.cls, seed: s.seed })).png),
  );
  const cells: GridCell[][] = [];
  for (const a of aSources) {
    const row: GridCell[] = [];
    for (const b of bSources) {
      const mixed = await api.mix({
        seed_a: a.seed,
        class_a: a.cls,
        seed_b: b.seed,
        class_b: b.cls,
        crossover_range: range,
      });
      row.push({ a, b, png: mixed.png });
    }
    cells.push(row);
  }
  return { range, aSources, bSources, aPngs, bPngs, cells };
}
