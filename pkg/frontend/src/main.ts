/** DOM wiring for the latent explorer: class/seed controls, direction
 * sliders with debounced edit requests, original-vs-edited panes, a
 * filmstrip sweep, and the style-mixing grid. */
import { ApiClient, isApiError, ModelInfo } from "./api.js";
import { debounce, LatestOnly } from "./debounce.js";
import { buildPanelModel, PanelModel } from "./directions.js";
import { buildMixGrid } from "./mixgrid.js";
import { ExplorerSession, filmstripAlphas } from "./session.js";

const api = new ApiClient("");
const session = ExplorerSession.fromFragment(location.hash);
const inflight = new LatestOnly();

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  node.append(...children);
  return node;
}

function imgFromPng(png: string, cls = "pane"): HTMLImageElement {
  const img = el("img", { class: cls });
  img.src = `data:image/png;base64,${png}`;
  return img;
}

function banner(msg: string, retry?: () => void): void {
  const box = document.getElementById("banner")!;
  box.textContent = msg;
  box.style.display = msg ? "block" : "none";
  if (retry) {
    const btn = el("button", {}, "retry");
    btn.onclick = () => {
      banner("");
      retry();
    };
    box.append(" ", btn);
  }
}

function describeError(e: unknown): string {
  if (isApiError(e)) return e.field ? `${e.error} (field: ${e.field})` : e.error;
  return `service unreachable: ${String(e)}`;
}

function syncFragment(): void {
  history.replaceState(null, "", "#" + session.toFragment());
}

async function regenerate(): Promise<void> {
  const v = inflight.next();
  try {
    const out = await api.generate({ class: session.state.cls, seed: session.state.seed });
    if (!inflight.isCurrent(v)) return;
    session.setBase(out.png, out.w_layers);
    document.getElementById("original")!.replaceChildren(imgFromPng(out.png));
    document.getElementById("edited")!.replaceChildren(imgFromPng(out.png));
    document.getElementById("filmstrip")!.replaceChildren();
    syncFragment();
  } catch (e) {
    banner(describeError(e), regenerate);
  }
}

async function applyEdit(directionId: string, alpha: number): Promise<void> {
  const v = inflight.next();
  try {
    const out = await api.edit({
      class: session.state.cls,
      direction_id: directionId,
      alpha,
      w_layers: session.baseWLayers,
    });
    if (!inflight.isCurrent(v) || !out.w_layers) return;
    session.pushEdit({ directionId, alpha, wLayers: out.w_layers, png: out.png });
    document.getElementById("edited")!.replaceChildren(imgFromPng(out.png));
    syncFragment();
  } catch (e) {
    banner(describeError(e));
  }
}

async function renderFilmstrip(directionId: string): Promise<void> {
  const strip = document.getElementById("filmstrip")!;
  strip.replaceChildren();
  for (const alpha of filmstripAlphas()) {
    try {
      const out = await api.edit({
        class: session.state.cls,
        direction_id: directionId,
        alpha,
        w_layers: session.baseWLayers,
      });
      strip.append(imgFromPng(out.png, "thumb"));
    } catch (e) {
      banner(describeError(e));
      return;
    }
  }
}

function renderPanel(model: PanelModel): void {
  const panel = document.getElementById("directions")!;
  panel.replaceChildren();
  if (model.empty) {
    panel.append(el("p", { class: "empty" }, "no directions loaded"));
    return;
  }
  for (const row of model.rows) {
    const slider = el("input", {
      type: "range",
      min: "-3",
      max: "3",
      step: "0.1",
      value: String(session.state.alphas[row.id] ?? 0),
    }) as HTMLInputElement;
    const label = el("span", { class: "alpha" }, "0.0");
    const debounced = debounce((alpha: number) => void applyEdit(row.id, alpha), 150);
    slider.oninput = () => {
      const alpha = session.setAlpha(row.id, Number(slider.value));
      label.textContent = alpha.toFixed(1);
      debounced(alpha);
    };
    const bar = el("div", { class: "bar" });
    bar.style.width = `${Math.round(row.bar * 100)}%`;
    const film = el("button", { class: "film" }, "sweep");
    film.onclick = () => void renderFilmstrip(row.id);
    panel.append(
      el("div", { class: "direction-row" },
        el("span", { class: "dir-id" }, row.id),
        el("span", { class: "eig" }, row.eigenvalue.toFixed(3), bar),
        slider, label, film),
    );
  }
}

async function loadDirections(): Promise<void> {
  try {
    const resp = await api.directions("W", session.state.layerRange);
    renderPanel(buildPanelModel(resp));
  } catch (e) {
    if (isApiError(e) && e.status === 404) {
      renderPanel(buildPanelModel(null));
    } else {
      banner(describeError(e), () => void loadDirections());
    }
  }
}

async function renderMixGrid(): Promise<void> {
  const holder = document.getElementById("mixgrid")!;
  try {
    const grid = await buildMixGrid(
      api,
      [session.state.mixA],
      [session.state.mixB],
      session.state.layerRange,
    );
    holder.replaceChildren(
      el("div", { class: "grid-row" }, "A:", imgFromPng(grid.aPngs[0], "thumb")),
      el("div", { class: "grid-row" }, "B:", imgFromPng(grid.bPngs[0], "thumb")),
      el("div", { class: "grid-row" }, "mix:", imgFromPng(grid.cells[0][0].png, "thumb")),
    );
  } catch (e) {
    banner(describeError(e));
  }
}

function wireControls(info: ModelInfo): void {
  const seedBox = document.getElementById("seed") as HTMLInputElement;
  const classBox = document.getElementById("class") as HTMLSelectElement;
  const rangeBox = document.getElementById("range") as HTMLSelectElement;
  const undoBtn = document.getElementById("undo") as HTMLButtonElement;

  seedBox.value = String(session.state.seed);
  for (let c = 0; c < info.n_classes; c++) {
    classBox.append(el("option", { value: String(c) }, `grade ${c}`));
  }
  classBox.value = String(session.state.cls);
  for (const name of info.layer_ranges) {
    rangeBox.append(el("option", { value: name }, name));
  }
  rangeBox.value = session.state.layerRange;

  seedBox.onchange = () => {
    session.state.seed = Number(seedBox.value);
    void regenerate();
  };
  classBox.onchange = () => {
    session.state.cls = Number(classBox.value);
    void regenerate();
  };
  rangeBox.onchange = () => {
    session.state.layerRange = rangeBox.value;
    syncFragment();
    void loadDirections();  // keeps the session seed
    void renderMixGrid();
  };
  undoBtn.onclick = () => {
    const { png } = session.undo();
    document.getElementById("edited")!.replaceChildren(imgFromPng(png));
  };
  document.getElementById("remix")!.onclick = () => void renderMixGrid();
}

async function boot(): Promise<void> {
  try {
    const info = await api.modelInfo();
    document.getElementById("model-line")!.textContent =
      `${info.target_resolution}x${info.target_resolution}, ${info.n_classes} grades, ` +
      `checkpoint ${info.checkpoint_hash.slice(0, 12)}`;
    wireControls(info);
    await regenerate();
    await loadDirections();
    await renderMixGrid();
  } catch (e) {
    banner(describeError(e), () => void boot());
  }
}

void boot();
