import { describe, expect, it } from "vitest";

import { ALPHA_LIMIT, ExplorerSession, filmstripAlphas } from "../src/session.js";

describe("ExplorerSession", () => {
  it("clamps alphas to the configured range", () => {
    const s = new ExplorerSession();
    expect(s.setAlpha("W:top:0", 7)).toBe(ALPHA_LIMIT);
    expect(s.setAlpha("W:top:0", -9)).toBe(-ALPHA_LIMIT);
    expect(s.setAlpha("W:top:0", 1.25)).toBe(1.25);
  });

  it("undo restores the exact prior codes", () => {
    const s = new ExplorerSession();
    const base = [
      [1, 2, 3],
      [4, 5, 6],
    ];
    s.setBase("png-base", base);
    s.pushEdit({ directionId: "W:top:0", alpha: 2, wLayers: [[9, 9, 9], [4, 5, 6]], png: "png-edit" });
    expect(s.currentPng()).toBe("png-edit");
    const undone = s.undo();
    expect(undone.png).toBe("png-base");
    expect(undone.wLayers).toEqual(base);
    // undo past the base is a no-op on the base state
    const again = s.undo();
    expect(again.png).toBe("png-base");
  });

  it("history supports undo to any prior state", () => {
    const s = new ExplorerSession();
    s.setBase("p0", [[0, 0]]);
    s.pushEdit({ directionId: "d", alpha: 1, wLayers: [[1, 0]], png: "p1" });
    s.pushEdit({ directionId: "d", alpha: 2, wLayers: [[3, 0]], png: "p2" });
    expect(s.undo().png).toBe("p1");
    expect(s.undo().png).toBe("p0");
  });

  it("serializes to a URL fragment and back", () => {
    const s = new ExplorerSession({ seed: 17, cls: 3, layerRange: "middle" });
    s.setAlpha("W:middle:1", -1.5);
    s.state.mixA = { seed: 4, cls: 0 };
    s.state.mixB = { seed: 9, cls: 4 };
    const frag = s.toFragment();
    const back = ExplorerSession.fromFragment("#" + frag);
    expect(back.state.seed).toBe(17);
    expect(back.state.cls).toBe(3);
    expect(back.state.layerRange).toBe("middle");
    expect(back.state.alphas["W:middle:1"]).toBe(-1.5);
    expect(back.state.mixA).toEqual({ seed: 4, cls: 0 });
    expect(back.state.mixB).toEqual({ seed: 9, cls: 4 });
  });

  it("setBase clears history and alphas", () => {
    const s = new ExplorerSession();
    s.setBase("a", [[1]]);
    s.setAlpha("d", 2);
    s.pushEdit({ directionId: "d", alpha: 2, wLayers: [[5]], png: "b" });
    s.setBase("c", [[7]]);
    expect(s.history).toEqual([]);
    expect(s.state.alphas).toEqual({});
    expect(s.currentPng()).toBe("c");
  });
});

describe("filmstripAlphas", () => {
  it("is a symmetric 5-step sweep centered on the original", () => {
    expect(filmstripAlphas()).toEqual([-3, -1.5, 0, 1.5, 3]);
    expect(filmstripAlphas()[2]).toBe(0);
  });
});
