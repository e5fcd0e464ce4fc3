/** The explorer's interaction identities against the service contract:
 * alpha=0 renders the original, an edit round-trip restores it, and the
 * style-mix grid degenerates to pure sources at empty/full crossover. */
import { describe, expect, it } from "vitest";

import { ApiClient, isApiError } from "../src/api.js";
import { buildMixGrid } from "../src/mixgrid.js";
import { buildPanelModel, eigenvaluesDescending } from "../src/directions.js";
import { fakeFetch } from "./fakeserver.js";

const api = new ApiClient("", fakeFetch());

describe("direction panel over /directions", () => {
  it("lists k directions with descending eigenvalues", async () => {
    const resp = await api.directions("W", "top");
    const model = buildPanelModel(resp);
    expect(model.rows).toHaveLength(resp.k);
    expect(eigenvaluesDescending(model)).toBe(true);
  });

  it("missing sets surface as 404", async () => {
    await expect(api.directions("W", "sideways")).rejects.toMatchObject({ status: 404 });
  });
});

describe("edit interactions over /edit", () => {
  it("alpha=0 renders a pane identical to the original", async () => {
    const base = await api.generate({ class: 1, seed: 7 });
    const edited = await api.edit({
      class: 1,
      direction_id: "W:top:0",
      alpha: 0,
      w_layers: base.w_layers,
    });
    expect(edited.png).toBe(base.png);
  });

  it("alpha then -alpha via returned codes restores the original", async () => {
    const base = await api.generate({ class: 2, seed: 3 });
    const fwd = await api.edit({
      class: 2,
      direction_id: "W:top:1",
      alpha: 2,
      w_layers: base.w_layers,
    });
    expect(fwd.png).not.toBe(base.png);
    const back = await api.edit({
      class: 2,
      direction_id: "W:top:1",
      alpha: -2,
      w_layers: fwd.w_layers!,
    });
    expect(back.png).toBe(base.png);
  });

  it("server-side field errors surface to the UI layer", async () => {
    try {
      await api.generate({ class: 99, seed: 1 });
      expect.unreachable();
    } catch (e) {
      expect(isApiError(e)).toBe(true);
      if (isApiError(e)) {
        expect(e.status).toBe(400);
        expect(e.field).toBe("class");
      }
    }
  });
});

describe("style-mix grid over /mix", () => {
  it("1x1 grid: identical sources reproduce the plain generation", async () => {
    const a = { seed: 5, cls: 0 };
    const grid = await buildMixGrid(api, [a], [a], "top");
    // same source on both axes at any range: codes identical to the source
    expect(grid.cells[0][0].png).toBe(grid.aPngs[0]);
  });

  it("'all' crossover renders pure source B", async () => {
    const grid = await buildMixGrid(api, [{ seed: 5, cls: 0 }], [{ seed: 9, cls: 2 }], "all");
    expect(grid.cells[0][0].png).toBe(grid.bPngs[0]);
  });

  it("grids carry one mixed cell per (A,B) pair plus headers", async () => {
    const aSrc = [{ seed: 1, cls: 0 }, { seed: 2, cls: 0 }, { seed: 3, cls: 1 }];
    const bSrc = [{ seed: 7, cls: 2 }, { seed: 8, cls: 2 }];
    const grid = await buildMixGrid(api, aSrc, bSrc, "top");
    expect(grid.cells).toHaveLength(3);
    expect(grid.cells[0]).toHaveLength(2);
    expect(grid.aPngs).toHaveLength(3);
    expect(grid.bPngs).toHaveLength(2);
  });
});
