/** Typed client for the search service JSON API. */

export interface SearchResult {
  premise_id: number;
  name: string;
  module: string;
  statement: string;
  cfr_score: number;
  rerank_probability?: number;
  final_rank: number;
}

export interface SearchRequest {
  state: string;
  k: number;
  rerank: boolean;
  k1: number;
}

export interface PremiseRequest {
  name: string;
  module: string;
  args: string[];
  goal: string;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`${status}: ${detail}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class SearchClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const parsed = await resp.json();
        if (parsed && typeof parsed.detail === "string") detail = parsed.detail;
      } catch {
        /* non-JSON error body; keep the status text */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async search(req: SearchRequest): Promise<SearchResult[]> {
    const data = await this.post<{ results: SearchResult[] }>("/api/search", req);
    return data.results;
  }

  async addPremise(req: PremiseRequest): Promise<number> {
    const data = await this.post<{ id: number }>("/api/premises", req);
    return data.id;
  }

  async stats(): Promise<{ corpus_size: number; rerank_enabled: boolean }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/stats`);
    if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
    return (await resp.json()) as { corpus_size: number; rerank_enabled: boolean };
  }
}
