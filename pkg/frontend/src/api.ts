/**
 * Typed client for the engine's /api endpoints. The viewer is a pure client:
 * every displayed artifact comes from these calls, nothing is recomputed
 * locally.
 */

export interface ViewInfo {
  view_id: string;
  split: "train" | "test";
  width: number;
  height: number;
}

export interface PromptInfo {
  prompt_id: string;
  label: string;
  dim: number;
}

export interface PointPrompt {
  view_id: string;
  prompt_label: string;
  x: number;
  y: number;
  score: number;
  image_width: number;
  image_height: number;
  source: string;
}

export interface Argmax {
  x: number;
  y: number;
  score: number;
}

export interface PngWithPoint {
  png: ArrayBuffer;
  point: PointPrompt;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function fail(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(private base: string = "") {}

  private url(path: string, params?: Record<string, string>): string {
    const u = new URL(this.base + path, this.base || "http://localhost");
    if (params) {
      for (const [k, v] of Object.entries(params)) u.searchParams.set(k, v);
    }
    return this.base ? u.toString() : u.pathname + u.search;
  }

  async listViews(): Promise<ViewInfo[]> {
    const resp = await fetch(this.url("/api/views"));
    if (!resp.ok) return fail(resp);
    return resp.json();
  }

  renderUrl(view: string, mode: "rgb" | "feature_pca"): string {
    return this.url("/api/render", { view, mode });
  }

  async fetchPng(url: string): Promise<ArrayBuffer> {
    const resp = await fetch(url);
    if (!resp.ok) return fail(resp);
    return resp.arrayBuffer();
  }

  async postPromptEmbedding(label: string, embedding: number[]): Promise<PromptInfo> {
    const resp = await fetch(this.url("/api/prompts"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ label, embedding }),
    });
    if (!resp.ok) return fail(resp);
    return resp.json();
  }

  async postPromptText(label: string, text: string): Promise<PromptInfo> {
    const resp = await fetch(this.url("/api/prompts"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ label, text }),
    });
    if (!resp.ok) return fail(resp);
    return resp.json();
  }

  async heatmap(view: string, prompt: string): Promise<{ png: ArrayBuffer; argmax: Argmax }> {
    const resp = await fetch(this.url("/api/heatmap", { view, prompt }));
    if (!resp.ok) return fail(resp);
    const argmax: Argmax = {
      x: Number(resp.headers.get("x-argmax-x")),
      y: Number(resp.headers.get("x-argmax-y")),
      score: Number(resp.headers.get("x-argmax-score")),
    };
    return { png: await resp.arrayBuffer(), argmax };
  }

  async mask(view: string, prompt: string, tau: number): Promise<PngWithPoint> {
    const resp = await fetch(this.url("/api/mask", { view, prompt, tau: String(tau) }));
    if (!resp.ok) return fail(resp);
    const doc = resp.headers.get("x-point-prompt");
    if (!doc) throw new ApiError(500, "mask response missing X-Point-Prompt header");
    return { png: await resp.arrayBuffer(), point: JSON.parse(doc) as PointPrompt };
  }

  async refine(view: string, prompt: string, model: string): Promise<PngWithPoint> {
    const resp = await fetch(
      this.url("/api/refine", { view, prompt, model }), { method: "POST" });
    if (!resp.ok) return fail(resp);
    const doc = resp.headers.get("x-point-prompt");
    if (!doc) throw new ApiError(500, "refine response missing X-Point-Prompt header");
    return { png: await resp.arrayBuffer(), point: JSON.parse(doc) as PointPrompt };
  }

  async refinedMask(view: string, prompt: string, model: string): Promise<ArrayBuffer> {
    const resp = await fetch(this.url("/api/refined_mask", { view, prompt, model }));
    if (!resp.ok) return fail(resp);
    return resp.arrayBuffer();
  }
}
