/** Explorer session state: current seed/class, per-direction alphas, layer
 * range, mix sources, and an exact undo history (edits are additive in code
 * space, so undo restores the precise prior codes). */

export interface EditStep {
  directionId: string;
  alpha: number;
  wLayers: number[][]; // codes after the edit
  png: string;
}

export interface SessionState {
  seed: number;
  cls: number;
  layerRange: string;
  alphas: Record<string, number>;
  mixA: { seed: number; cls: number };
  mixB: { seed: number; cls: number };
}

export const ALPHA_LIMIT = 3;

export class ExplorerSession {
  state: SessionState;
  basePng = "";
  baseWLayers: number[][] = [];
  history: EditStep[] = [];

  constructor(initial?: Partial<SessionState>) {
    this.state = {
      seed: 1,
      cls: 0,
      layerRange: "top",
      alphas: {},
      mixA: { seed: 1, cls: 0 },
      mixB: { seed: 2, cls: 4 },
      ...initial,
    };
  }

  setAlpha(directionId: string, alpha: number): number {
    const clamped = Math.max(-ALPHA_LIMIT, Math.min(ALPHA_LIMIT, alpha));
    this.state.alphas[directionId] = clamped;
    return clamped;
  }

  setBase(png: string, wLayers: number[][]): void {
    this.basePng = png;
    this.baseWLayers = wLayers.map((w) => [...w]);
    this.history = [];
    this.state.alphas = {};
  }

  /** Codes the next edit should start from (the latest applied edit). */
  currentCodes(): number[][] {
    const last = this.history[this.history.length - 1];
    return (last ? last.wLayers : this.baseWLayers).map((w) => [...w]);
  }

  currentPng(): string {
    const last = this.history[this.history.length - 1];
    return last ? last.png : this.basePng;
  }

  pushEdit(step: EditStep): void {
    this.history.push(step);
  }

  /** Exact undo: drop the last step and return the state to render. */
  undo(): { png: string; wLayers: number[][] } {
    this.history.pop();
    return { png: this.currentPng(), wLayers: this.currentCodes() };
  }

  /** Serializes the reproducible knobs into a URL fragment. */
  toFragment(): string {
    const s = this.state;
    const parts = [
      `seed=${s.seed}`,
      `cls=${s.cls}`,
      `range=${encodeURIComponent(s.layerRange)}`,
      `ma=${s.mixA.seed}.${s.mixA.cls}`,
      `mb=${s.mixB.seed}.${s.mixB.cls}`,
    ];
    const alphas = Object.entries(s.alphas)
      .filter(([, v]) => v !== 0)
      .map(([k, v]) => `${encodeURIComponent(k)}:${v}`);
    if (alphas.length) parts.push(`a=${alphas.join(",")}`);
    return parts.join("&");
  }

  static fromFragment(fragment: string): ExplorerSession {
    const session = new ExplorerSession();
    const params = new URLSearchParams(fragment.replace(/^#/, ""));
    const seed = params.get("seed");
    if (seed !== null) session.state.seed = Number(seed);
    const cls = params.get("cls");
    if (cls !== null) session.state.cls = Number(cls);
    const range = params.get("range");
    if (range !== null) session.state.layerRange = range;
    for (const [key, field] of [["ma", "mixA"], ["mb", "mixB"]] as const) {
      const raw = params.get(key);
      if (raw) {
        const [s, c] = raw.split(".").map(Number);
        session.state[field] = { seed: s, cls: c };
      }
    }
    const alphas = params.get("a");
    if (alphas) {
      for (const pair of alphas.split(",")) {
        const idx = pair.lastIndexOf(":");
        const id = decodeURIComponent(pair.slice(0, idx));
        session.setAlpha(id, Number(pair.slice(idx + 1)));
      }
    }
    return session;
  }
}

/** Filmstrip alphas: a symmetric 5-step sweep whose center is the original. */
export function filmstripAlphas(limit = ALPHA_LIMIT): number[] {
  return [-limit, -limit / 2, 0, limit / 2, limit];
}
