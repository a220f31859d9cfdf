import { describe, expect, it } from "vitest";

import { ApiError, SearchClient } from "./api.js";

function fakeFetch(status: number, body: unknown) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const impl = async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { impl, calls };
}

describe("SearchClient", () => {
  it("posts the query and unwraps results", async () => {
    const { impl, calls } = fakeFetch(200, { results: [{ premise_id: 1 }] });
    const client = new SearchClient("http://svc", impl);
    const results = await client.search({ state: "<GOAL> x", k: 3, rerank: false, k1: 20 });
    expect(results).toHaveLength(1);
    expect(calls[0].url).toBe("http://svc/api/search");
    expect(JSON.parse(String(calls[0].init?.body))).toMatchObject({ k: 3 });
  });

  it("surfaces error detail with the status", async () => {
    const { impl } = fakeFetch(422, { detail: "k exceeds k1" });
    const client = new SearchClient("", impl);
    await expect(
      client.search({ state: "<GOAL> x", k: 30, rerank: true, k1: 10 }),
    ).rejects.toThrowError(ApiError);
    await client
      .search({ state: "<GOAL> x", k: 30, rerank: true, k1: 10 })
      .catch((e: ApiError) => {
        expect(e.status).toBe(422);
        expect(e.detail).toBe("k exceeds k1");
      });
  });

  it("addPremise returns the created id", async () => {
    const { impl } = fakeFetch(201, { id: 41 });
    const client = new SearchClient("", impl);
    expect(await client.addPremise({ name: "A.b", module: "A", args: [], goal: "g" })).toBe(41);
  });

  it("409 becomes an ApiError with that status", async () => {
    const { impl } = fakeFetch(409, { detail: "premise exists" });
    const client = new SearchClient("", impl);
    await client
      .addPremise({ name: "A.b", module: "A", args: [], goal: "g" })
      .then(() => {
        throw new Error("expected rejection");
      })
      .catch((e: ApiError) => expect(e.status).toBe(409));
  });
});
