/** Typed client for the inference service. Every pixel the explorer shows
 * comes from these endpoints; the UI never synthesizes imagery locally. */

export interface ModelInfo {
  n_classes: number;
  latent_dim: number;
  w_dim: number;
  target_resolution: number;
  n_sites: number;
  step: number;
  checkpoint_hash: string;
  direction_sets: string[];
  layer_ranges: string[];
}

export interface GenerateResponse {
  png: string;
  z: number[];
  w: number[];
  w_layers: number[][];
  seed: number | null;
  class: number;
}

export interface EditResponse {
  png: string;
  w_layers?: number[][];
  z?: number[];
  class: number;
  direction_id: string;
  alpha: number;
}

export interface MixResponse {
  png: string;
  crossover_range: string;
}

export interface DirectionsResponse {
  direction_ids: string[];
  eigenvalues: number[];
  k: number;
  space: string;
  layer_range: string;
}

export interface ApiError {
  status: number;
  error: string;
  field?: string;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async call<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, init);
    const body = await res.json();
    if (!res.ok) {
      const err: ApiError = {
        status: res.status,
        error: body.error ?? "request failed",
        field: body.field,
      };
      throw err;
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.call<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  modelInfo(): Promise<ModelInfo> {
    return this.call<ModelInfo>("/model/info");
  }

  generate(req: {
    class: number;
    seed?: number;
    z?: number[];
    noise_mode?: string;
  }): Promise<GenerateResponse> {
    return this.post<GenerateResponse>("/generate", { noise_mode: "zero", ...req });
  }

  edit(req: {
    class: number;
    direction_id: string;
    alpha: number;
    seed?: number;
    w_layers?: number[][];
    z?: number[];
    noise_mode?: string;
  }): Promise<EditResponse> {
    return this.post<EditResponse>("/edit", { noise_mode: "zero", ...req });
  }

  mix(req: {
    seed_a: number;
    class_a: number;
    seed_b: number;
    class_b: number;
    crossover_range: string;
    noise_mode?: string;
  }): Promise<MixResponse> {
    return this.post<MixResponse>("/mix", { noise_mode: "zero", ...req });
  }

  directions(space: string, layerRange: string): Promise<DirectionsResponse> {
    const q = new URLSearchParams({ space, layer_range: layerRange });
    return this.call<DirectionsResponse>(`/directions?${q}`);
  }
}

export function isApiError(e: unknown): e is ApiError {
  return typeof e === "object" && e !== null && "status" in e && "error" in e;
}
