/** Typed wrappers around the two backend endpoints the page consumes. */

export interface Figure {
  figure_id: string;
  display_name: string;
}

export interface SentimentPayload {
  figure_id: string;
  positive: number;
  negative: number;
  pending: number;
  from: string | null;
  to: string | null;
  as_of: string;
}

export class ApiError extends Error {
  constructor(public readonly status: number, path: string) {
    super(`${path} responded with HTTP ${status}`);
  }
}

async function getJson<T>(path: string): Promise<T> {
  const resp = await fetch(path, { headers: { Accept: "application/json" } });
  if (!resp.ok) {
    throw new ApiError(resp.status, path);
  }
  return (await resp.json()) as T;
}

export function getFigures(): Promise<Figure[]> {
  return getJson<Figure[]>("/api/figures");
}

export function getSentiment(figureId: string): Promise<SentimentPayload> {
  return getJson<SentimentPayload>(
    `/api/sentiment?figure=${encodeURIComponent(figureId)}`,
  );
}
