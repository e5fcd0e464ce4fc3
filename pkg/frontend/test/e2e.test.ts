/** Same interaction identities against a live service. Point
 * RETSYN_SERVICE_URL at a running `retsyn serve` (toy checkpoint with a
 * W/top direction set loaded); skipped otherwise. */
import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { buildPanelModel, eigenvaluesDescending } from "../src/directions.js";

const BASE = process.env.RETSYN_SERVICE_URL;
const maybe = BASE ? describe : describe.skip;

maybe("live service", () => {
  const api = new ApiClient(BASE!);

  it("direction panel lists k directions descending", async () => {
    const resp = await api.directions("W", "top");
    const model = buildPanelModel(resp);
    expect(model.rows.length).toBe(resp.k);
    expect(eigenvaluesDescending(model)).toBe(true);
  });

  it("alpha=0 pane is pixel-identical to the original", async () => {
    const base = await api.generate({ class: 1, seed: 11 });
    const edited = await api.edit({
      class: 1,
      direction_id: "W:top:0",
      alpha: 0,
      w_layers: base.w_layers,
    });
    expect(edited.png).toBe(base.png);
  });

  it("edit round-trip restores the original image", async () => {
    const base = await api.generate({ class: 1, seed: 12 });
    const fwd = await api.edit({
      class: 1,
      direction_id: "W:top:0",
      alpha: 2,
      w_layers: base.w_layers,
    });
    const back = await api.edit({
      class: 1,
      direction_id: "W:top:0",
      alpha: -2,
      w_layers: fwd.w_layers!,
    });
    expect(back.png).toBe(base.png);
  });

  it("mix grid cells equal pure sources at the degenerate ranges", async () => {
    const a = await api.generate({ class: 0, seed: 3 });
    const b = await api.generate({ class: 1, seed: 4 });
    const same = await api.mix({
      seed_a: 3, class_a: 0, seed_b: 3, class_b: 0, crossover_range: "top",
    });
    expect(same.png).toBe(a.png);
    const all = await api.mix({
      seed_a: 3, class_a: 0, seed_b: 4, class_b: 1, crossover_range: "all",
    });
    expect(all.png).toBe(b.png);
  });
});
