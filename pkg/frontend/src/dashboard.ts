/** Card grid: one doughnut per configured figure, polled on an interval.
 *
 * A failed refresh marks the card stale but keeps the last good numbers;
 * a failed figure load replaces the page with an error banner and a retry
 * button.
 */

import { Figure, SentimentPayload, getFigures, getSentiment } from "./api.js";
import { renderDoughnut } from "./doughnut.js";

export const DEFAULT_POLL_SECONDS = 15;

export interface DashboardOptions {
  pollSeconds?: number;
}

export function pollSecondsFromQuery(search: string): number {
  const raw = new URLSearchParams(search).get("poll");
  if (raw === null) {
    return DEFAULT_POLL_SECONDS;
  }
  const parsed = Number(raw);
  return Number.isFinite(parsed) && parsed > 0 ? parsed : DEFAULT_POLL_SECONDS;
}

export class Dashboard {
  private readonly pollSeconds: number;
  private timer: ReturnType<typeof setInterval> | null = null;
  private readonly inFlight = new Set<string>();
  private figures: Figure[] = [];

  constructor(
    private readonly root: HTMLElement,
    options: DashboardOptions = {},
  ) {
    this.pollSeconds = options.pollSeconds ?? DEFAULT_POLL_SECONDS;
  }

  async start(): Promise<void> {
    this.root.replaceChildren();
    try {
      this.figures = await getFigures();
    } catch (err) {
      this.renderErrorBanner(err);
      return;
    }
    if (this.figures.length === 0) {
      const empty = document.createElement("p");
      empty.className = "no-figures";
      empty.textContent = "no figures configured";
      this.root.appendChild(empty);
      return;
    }
    const grid = document.createElement("div");
    grid.className = "card-grid";
    for (const figure of this.figures) {
      grid.appendChild(this.buildCard(figure));
    }
    this.root.appendChild(grid);
    await this.refreshAll();
    this.timer = setInterval(() => {
      void this.refreshAll();
    }, this.pollSeconds * 1000);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async refreshAll(): Promise<void> {
    await Promise.all(this.figures.map((f) => this.refreshCard(f.figure_id)));
  }

  async refreshCard(figureId: string): Promise<void> {
    const card = this.root.querySelector<HTMLElement>(
      `.card[data-figure="${figureId}"]`,
    );
    if (card === null || this.inFlight.has(figureId)) {
      return;
    }
    this.inFlight.add(figureId);
    try {
      const payload = await getSentiment(figureId);
      this.applyPayload(card, payload);
      card.querySelector(".stale-badge")?.setAttribute("hidden", "");
    } catch {
      card.querySelector(".stale-badge")?.removeAttribute("hidden");
    } finally {
      this.inFlight.delete(figureId);
    }
  }

  private buildCard(figure: Figure): HTMLElement {
    const card = document.createElement("section");
    card.className = "card";
    card.dataset.figure = figure.figure_id;
    card.innerHTML = `
      <header>
        <h2>${escapeHtml(figure.display_name)}</h2>
        <span class="stale-badge" hidden>stale</span>
      </header>
      <div class="chart"></div>
      <dl class="counts">
        <dt>positive</dt><dd class="count-positive">–</dd>
        <dt>negative</dt><dd class="count-negative">–</dd>
      </dl>
      <p class="pending-caption" hidden></p>
      <time class="as-of"></time>`;
    return card;
  }

  private applyPayload(card: HTMLElement, payload: SentimentPayload): void {
    const chart = card.querySelector(".chart")!;
    chart.replaceChildren(renderDoughnut(payload.positive, payload.negative));
    card.querySelector(".count-positive")!.textContent = String(payload.positive);
    card.querySelector(".count-negative")!.textContent = String(payload.negative);
    const pending = card.querySelector<HTMLElement>(".pending-caption")!;
    if (payload.pending > 0) {
      pending.textContent = `${payload.pending} awaiting scoring`;
      pending.removeAttribute("hidden");
    } else {
      pending.setAttribute("hidden", "");
      pending.textContent = "";
    }
    const asOf = card.querySelector<HTMLElement>(".as-of")!;
    asOf.textContent = `as of ${payload.as_of}`;
    asOf.setAttribute("datetime", payload.as_of);
  }

  private renderErrorBanner(err: unknown): void {
    const banner = document.createElement("div");
    banner.className = "error-banner";
    const message = document.createElement("p");
    message.textContent = `could not load figures: ${
      err instanceof Error ? err.message : String(err)
    }`;
    const retry = document.createElement("button");
    retry.className = "retry";
    retry.textContent = "retry";
    retry.addEventListener("click", () => {
      void this.start();
    });
    banner.append(message, retry);
    this.root.replaceChildren(banner);
  }
}

function escapeHtml(text: string): string {
  const div = document.createElement("div");
  div.textContent = text;
  return div.innerHTML;
}
