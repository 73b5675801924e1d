/**
 * Single-page viewer: pick a posed view, submit a language prompt (text via
 * the bridge, or a TEMB upload when no bridge is configured), inspect the
 * heatmap, tune the threshold, and trigger point-prompted refinement with a
 * side-by-side rough/refined comparison.
 */
import { ApiClient, ApiError, Argmax, PointPrompt, ViewInfo } from "./api.js";
import { debounce } from "./debounce.js";
import { DEFAULT_STATE, DisplayMode, ViewerState, stateFromFragment, stateToFragment } from "./state.js";
import { parseTemb } from "./temb.js";

const api = new ApiClient("");
const MODES: DisplayMode[] = ["rgb", "feature_pca", "heatmap", "mask", "refined"];
const DEBOUNCE_MS = 200;

let state: ViewerState = { ...DEFAULT_STATE };
let views: ViewInfo[] = [];
let lastPoint: PointPrompt | null = null;
let generation = 0; // stale async responses are dropped

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setStatus(message: string, isError = false): void {
  const box = el<HTMLDivElement>("status");
  box.textContent = message;
  box.className = isError ? "status error" : "status";
}

function pushState(): void {
  window.location.hash = stateToFragment(state);
}

function pngUrl(buf: ArrayBuffer): string {
  return URL.createObjectURL(new Blob([buf], { type: "image/png" }));
}

function currentView(): ViewInfo | undefined {
  return views.find((v) => v.view_id === state.selectedView);
}

function setMarker(point: Argmax | PointPrompt | null): void {
  const marker = el<HTMLDivElement>("marker");
  const view = currentView();
  if (!point || !view || state.displayMode === "feature_pca") {
    marker.style.display = "none";
    return;
  }
  marker.style.display = "block";
  marker.style.left = `${((point.x + 0.5) / view.width) * 100}%`;
  marker.style.top = `${((point.y + 0.5) / view.height) * 100}%`;
}

function renderViewList(): void {
  const list = el<HTMLUListElement>("view-list");
  list.innerHTML = "";
  for (const v of views) {
    const item = document.createElement("li");
    item.textContent = `${v.view_id}`;
    const badge = document.createElement("span");
    badge.className = `badge ${v.split}`;
    badge.textContent = v.split;
    item.appendChild(badge);
    if (v.view_id === state.selectedView) item.classList.add("selected");
    item.onclick = () => {
      state.selectedView = v.view_id;
      pushState();
      void refreshDisplay();
      renderViewList();
    };
    list.appendChild(item);
  }
}

function renderModeTabs(): void {
  const tabs = el<HTMLDivElement>("mode-tabs");
  tabs.innerHTML = "";
  for (const mode of MODES) {
    const b = document.createElement("button");
    b.textContent = mode;
    b.className = mode === state.displayMode ? "tab active" : "tab";
    b.onclick = () => {
      state.displayMode = mode;
      pushState();
      renderModeTabs();
      void refreshDisplay();
    };
    tabs.appendChild(b);
  }
}

async function refreshDisplay(): Promise<void> {
  const view = state.selectedView;
  if (!view) return;
  const gen = ++generation;
  const base = el<HTMLImageElement>("base-image");
  const overlay = el<HTMLImageElement>("overlay-image");
  const compare = el<HTMLDivElement>("compare");
  compare.style.display = "none";
  overlay.style.display = "none";
  overlay.style.opacity = String(state.overlayOpacity);

  try {
    if (state.displayMode === "rgb" || state.displayMode === "feature_pca") {
      const mode = state.displayMode === "rgb" ? "rgb" : "feature_pca";
      base.src = api.renderUrl(view, mode);
      setMarker(null);
      return;
    }
    base.src = api.renderUrl(view, "rgb");
    if (!state.promptId) {
      setStatus("submit a prompt to see heatmaps and masks");
      return;
    }
    if (state.displayMode === "heatmap") {
      const { png, argmax } = await api.heatmap(view, state.promptId);
      if (gen !== generation) return;
      overlay.src = pngUrl(png);
      overlay.style.display = "block";
      setMarker(argmax);
      setStatus(`argmax (${argmax.x}, ${argmax.y}) score ${argmax.score.toFixed(4)}`);
    } else if (state.displayMode === "mask") {
      const { png, point } = await api.mask(view, state.promptId, state.tau);
      if (gen !== generation) return;
      overlay.src = pngUrl(png);
      overlay.style.display = "block";
      lastPoint = point;
      setMarker(point);
      setStatus(`tau ${state.tau.toFixed(3)}; point (${point.x}, ${point.y}) ` +
        `score ${point.score.toFixed(4)}`);
    } else {
      await showComparison(view, gen);
    }
  } catch (err) {
    if (gen === generation) reportError(err);
  }
}

async function showComparison(view: string, gen: number): Promise<void> {
  if (!state.promptId) return;
  const compare = el<HTMLDivElement>("compare");
  const rough = el<HTMLImageElement>("rough-image");
  const refined = el<HTMLImageElement>("refined-image");
  const model = el<HTMLSelectElement>("model-select").value;
  const { png, point } = await api.mask(view, state.promptId, state.tau);
  if (gen !== generation) return;
  rough.src = pngUrl(png);
  lastPoint = point;
  setMarker(point);
  try {
    const refinedPng = await api.refinedMask(view, state.promptId, model);
    if (gen !== generation) return;
    refined.src = pngUrl(refinedPng);
  } catch {
    refined.removeAttribute("src");
    setStatus(`no refined mask stored for model ${model}; press Refine`, false);
  }
  compare.style.display = "flex";
}

function reportError(err: unknown): void {
  if (err instanceof ApiError && err.status === 503) {
    setStatus(`bridge unavailable (${err.message}) — upload a .temb prompt file instead`,
      true);
  } else if (err instanceof ApiError) {
    setStatus(`${err.status}: ${err.message}`, true);
  } else {
    setStatus(String(err), true);
  }
}

async function submitTextPrompt(): Promise<void> {
  const input = el<HTMLInputElement>("prompt-text");
  const text = input.value.trim();
  if (!text) return;
  try {
    const info = await api.postPromptText(text, text);
    state.promptId = info.prompt_id;
    state.promptLabel = info.label;
    state.displayMode = "heatmap";
    pushState();
    renderModeTabs();
    await refreshDisplay();
  } catch (err) {
    reportError(err);
  }
}

async function uploadTembPrompt(file: File): Promise<void> {
  try {
    const emb = parseTemb(await file.arrayBuffer());
    const info = await api.postPromptEmbedding(emb.label, emb.vector);
    state.promptId = info.prompt_id;
    state.promptLabel = info.label;
    state.displayMode = "heatmap";
    pushState();
    renderModeTabs();
    setStatus(`prompt "${info.label}" registered (${info.dim}-d)`);
    await refreshDisplay();
  } catch (err) {
    reportError(err);
  }
}

async function runRefine(): Promise<void> {
  if (!state.selectedView || !state.promptId) {
    setStatus("select a view and a prompt first", true);
    return;
  }
  const model = el<HTMLSelectElement>("model-select").value;
  setStatus(`refining with ${model}...`);
  try {
    await api.refine(state.selectedView, state.promptId, model);
    state.displayMode = "refined";
    pushState();
    renderModeTabs();
    await refreshDisplay();
    setStatus(`refined mask from ${model} stored`);
  } catch (err) {
    reportError(err); // rough mask stays untouched
  }
}

const debouncedMaskRefresh = debounce(() => void refreshDisplay(), DEBOUNCE_MS);

function wireControls(): void {
  const tau = el<HTMLInputElement>("tau-slider");
  const tauLabel = el<HTMLSpanElement>("tau-value");
  tau.value = String(state.tau);
  tauLabel.textContent = state.tau.toFixed(3);
  tau.oninput = () => {
    state.tau = Number(tau.value);
    tauLabel.textContent = state.tau.toFixed(3);
    pushState();
    if (state.displayMode === "mask" || state.displayMode === "refined") {
      debouncedMaskRefresh();
    }
  };

  const opacity = el<HTMLInputElement>("opacity-slider");
  opacity.value = String(state.overlayOpacity);
  opacity.oninput = () => {
    state.overlayOpacity = Number(opacity.value);
    pushState();
    el<HTMLImageElement>("overlay-image").style.opacity = String(state.overlayOpacity);
  };

  el<HTMLButtonElement>("prompt-submit").onclick = () => void submitTextPrompt();
  el<HTMLInputElement>("prompt-text").onkeydown = (e) => {
    if (e.key === "Enter") void submitTextPrompt();
  };
  el<HTMLInputElement>("temb-file").onchange = (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (file) void uploadTembPrompt(file);
  };
  el<HTMLButtonElement>("refine-button").onclick = () => void runRefine();
}

async function boot(): Promise<void> {
  state = stateFromFragment(window.location.hash);
  try {
    views = await api.listViews();
  } catch (err) {
    setStatus(`cannot reach the engine service: ${String(err)}`, true);
    return;
  }
  if (!state.selectedView && views.length > 0) {
    state.selectedView = views[0]!.view_id;
  }
  renderViewList();
  renderModeTabs();
  wireControls();
  pushState();
  await refreshDisplay();
}

window.addEventListener("DOMContentLoaded", () => void boot());
