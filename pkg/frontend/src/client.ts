/** HTTP/SSE client for the session server; works in browsers and Node 20. */

import { GraphSnapshot, WireEvent } from "./types.js";

export class ServerClient {
  constructor(readonly base: string) {}

  private url(path: string): string {
    return this.base.replace(/\/$/, "") + path;
  }

  private async post(path: string, body?: unknown): Promise<any> {
    const response = await fetch(this.url(path), {
      method: "POST",
      headers: body !== undefined ? { "Content-Type": "application/json" } : {},
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!response.ok) {
      throw new Error(`${path} -> ${response.status}: ${await response.text()}`);
    }
    return response.json();
  }

  async createSession(question: string): Promise<string> {
    const doc = await this.post("/sessions", { question });
    return doc.session_id;
  }

  async sessionState(sessionId: string): Promise<any> {
    const response = await fetch(this.url(`/sessions/${sessionId}`));
    if (!response.ok) throw new Error(`state -> ${response.status}`);
    return response.json();
  }

  /** Read the event log from `after` until the server closes the stream
   * (i.e. everything currently known when not following). */
  async events(sessionId: string, after = 0): Promise<WireEvent[]> {
    const out: WireEvent[] = [];
    await this.streamEvents(sessionId, after, (event) => out.push(event), false);
    return out;
  }

  /** Consume the SSE stream; resolves when the stream ends or `signal`
   * aborts.  Reconnection is the caller's job: call again with the last
   * seen seq and nothing is lost or duplicated. */
  async streamEvents(
    sessionId: string,
    after: number,
    onEvent: (event: WireEvent) => void,
    follow = true,
    signal?: AbortSignal
  ): Promise<void> {
    const response = await fetch(
      this.url(`/sessions/${sessionId}/events?from=${after}&follow=${follow}`),
      { signal }
    );
    if (!response.ok || !response.body) {
      throw new Error(`events -> ${response.status}`);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { value, done } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let boundary;
      while ((boundary = buffer.indexOf("\n\n")) !== -1) {
        const frame = buffer.slice(0, boundary);
        buffer = buffer.slice(boundary + 2);
        for (const line of frame.split("\n")) {
          if (line.startsWith("data: ")) {
            onEvent(JSON.parse(line.slice("data: ".length)) as WireEvent);
          }
        }
      }
    }
  }

  async snapshot(
    sessionId: string,
    view: "split" | "merged" = "merged",
    saliency: "high" | "all" = "all",
    show?: number[]
  ): Promise<GraphSnapshot> {
    const params = new URLSearchParams({ view, saliency });
    if (show && show.length) params.set("show", show.join(","));
    const response = await fetch(
      this.url(`/sessions/${sessionId}/graph?${params.toString()}`)
    );
    if (!response.ok) throw new Error(`graph -> ${response.status}`);
    return response.json();
  }

  async nodeAction(
    sessionId: string,
    nodeId: number,
    action: "explain" | "examples" | "trim" | "collapse" | "expand"
  ): Promise<string> {
    const doc = await this.post(`/sessions/${sessionId}/nodes/${nodeId}/${action}`);
    return doc.request_id;
  }

  async mergeInto(sessionId: string, fromId: number, intoId: number): Promise<string> {
    const doc = await this.post(
      `/sessions/${sessionId}/nodes/${fromId}/merge-into/${intoId}`
    );
    return doc.request_id;
  }

  async tellMeMore(sessionId: string, paragraph: number): Promise<string> {
    const doc = await this.post(`/sessions/${sessionId}/paragraphs/${paragraph}/more`);
    return doc.request_id;
  }

  async addParagraph(sessionId: string): Promise<string> {
    const doc = await this.post(`/sessions/${sessionId}/add-paragraph`);
    return doc.request_id;
  }

  /** Wait until events correlated to `requestId` stop arriving (one
   * gesture round-trip): resolves with everything received.  The
   * non-follow stream only closes once the server is idle, so two
   * stable polls mean the gesture's effects are fully delivered. */
  async gestureEvents(
    sessionId: string,
    after: number,
    requestId: string,
    timeoutMs = 15000
  ): Promise<WireEvent[]> {
    const deadline = Date.now() + timeoutMs;
    let collected: WireEvent[] = [];
    let stable = 0;
    while (Date.now() < deadline) {
      const tail = await this.events(sessionId, after);
      const mine = tail.filter((e) => e.request_id === requestId);
      if (mine.length > 0 && mine.length === collected.length) {
        stable += 1;
        if (stable >= 2) return mine;
      } else {
        stable = 0;
      }
      collected = mine;
      await new Promise((resolve) => setTimeout(resolve, 60));
    }
    if (collected.length) return collected;
    throw new Error(`no events for request ${requestId} within ${timeoutMs}ms`);
  }
}
