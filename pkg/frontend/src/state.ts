/**
 * Viewer state and its URL-fragment round trip: reloading a fragment-bearing
 * URL reproduces the same display.
 */

export type DisplayMode = "rgb" | "feature_pca" | "heatmap" | "mask" | "refined";

export interface ViewerState {
  selectedView: string | null;
  promptId: string | null;
  promptLabel: string;
  tau: number;
  displayMode: DisplayMode;
  overlayOpacity: number;
}

export const DEFAULT_STATE: ViewerState = {
  selectedView: null,
  promptId: null,
  promptLabel: "",
  tau: 0.75,
  displayMode: "rgb",
  overlayOpacity: 1.0,
};

const MODES: DisplayMode[] = ["rgb", "feature_pca", "heatmap", "mask", "refined"];

export function stateToFragment(s: ViewerState): string {
  const p = new URLSearchParams();
  if (s.selectedView) p.set("view", s.selectedView);
  if (s.promptId) p.set("prompt", s.promptId);
  if (s.promptLabel) p.set("label", s.promptLabel);
  p.set("tau", s.tau.toFixed(3));
  p.set("mode", s.displayMode);
  p.set("opacity", s.overlayOpacity.toFixed(2));
  return p.toString();
}

export function stateFromFragment(fragment: string): ViewerState {
  const p = new URLSearchParams(fragment.replace(/^#/, ""));
  const unit = (raw: string | null, fallback: number) => {
    if (raw === null) return fallback;
    const v = Number(raw);
    return Number.isFinite(v) && v >= 0 && v <= 1 ? v : fallback;
  };
  const mode = p.get("mode");
  return {
    selectedView: p.get("view"),
    promptId: p.get("prompt"),
    promptLabel: p.get("label") ?? "",
    tau: unit(p.get("tau"), DEFAULT_STATE.tau),
    displayMode: MODES.includes(mode as DisplayMode)
      ? (mode as DisplayMode)
      : DEFAULT_STATE.displayMode,
    overlayOpacity: unit(p.get("opacity"), DEFAULT_STATE.overlayOpacity),
  };
}
