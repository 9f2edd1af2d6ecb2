import type { AttributeInfo, InterpolateResponse, TranslateResponse } from "./types.js";

export interface HttpResponse {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponse>;

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

function detailText(body: unknown): string {
  if (body && typeof body === "object" && "detail" in body) {
    const detail = (body as { detail: unknown }).detail;
    return typeof detail === "string" ? detail : JSON.stringify(detail);
  }
  return JSON.stringify(body);
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl;
  }

  async attributes(): Promise<AttributeInfo> {
    return (await this.request("/attributes")) as AttributeInfo;
  }

  async translate(
    image: string,
    edits: Record<string, number>,
  ): Promise<TranslateResponse> {
    return (await this.request("/translate", {
      image,
      relative_attributes: edits,
    })) as TranslateResponse;
  }

  async interpolate(
    image: string,
    edits: Record<string, number>,
    steps: number,
  ): Promise<InterpolateResponse> {
    return (await this.request("/interpolate", {
      image,
      relative_attributes: edits,
      steps,
    })) as InterpolateResponse;
  }

  private async request(path: string, body?: object): Promise<unknown> {
    const response = await this.fetchImpl(
      this.base + path,
      body === undefined
        ? undefined
        : {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
          },
    );
    const parsed = await response.json().catch(() => null);
    if (!response.ok) {
      throw new ApiError(response.status, detailText(parsed));
    }
    return parsed;
  }
}
