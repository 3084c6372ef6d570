// Browser wiring: socket lifecycle, DOM rendering, and the input loop.
// All conversation logic lives in the pure reducer/key modules; this file
// only schedules, renders, and forwards frames.

import { indicatorPolicy } from "./indicator.js";
import { DRAFT_DEBOUNCE_MS, flushDraft, handleKey, initialKeyState } from "./keys.js";
import { decodeServerEvent, encodeClientEvent } from "./protocol.js";
import { initialView, reduce, type ViewMessage, type ViewState } from "./reducer.js";

const BUBBLE_STYLES: Record<ViewMessage["visualState"], string> = {
  draft_gray: "bubble user draft",
  sent_blue_bubble: "bubble user sent",
  typing_gray_text: "bot typing",
  sent_black_text: "bot sent",
};

export class ChatClient {
  private view: ViewState = initialView();
  private keys = initialKeyState();
  private socket: WebSocket | null = null;
  private startedAt = Date.now();
  private flushTimer: number | null = null;

  constructor(
    private root: HTMLElement,
    private sessionId: string
  ) {}

  now(): number {
    return Date.now() - this.startedAt;
  }

  async connect(): Promise<void> {
    const scheme = location.protocol === "https:" ? "wss" : "ws";
    const socket = new WebSocket(
      `${scheme}://${location.host}/sessions/${this.sessionId}/stream`
    );
    this.socket = socket;
    socket.onopen = () => {
      socket.send(encodeClientEvent({ type: "hello", session_id: this.sessionId }));
    };
    socket.onmessage = (raw) => {
      const event = decodeServerEvent(String(raw.data));
      if (event === null) {
        console.warn("dropped malformed frame", raw.data);
        return;
      }
      this.view = reduce(this.view, event, this.now());
      if (this.view.ignored.length) {
        for (const note of this.view.ignored) console.info("ignored frame:", note);
        this.view = { ...this.view, ignored: [] };
      }
      this.render();
    };
    socket.onclose = () => {
      this.view = { ...this.view, connection: "lost" };
      this.render();
    };
    this.render();
  }

  onKey(key: string): void {
    const result = handleKey(this.view, this.keys, key, this.now());
    this.view = result.view;
    this.keys = result.keys;
    if (result.frame && this.socket?.readyState === WebSocket.OPEN) {
      this.socket.send(encodeClientEvent(result.frame));
    }
    if (this.keys.draftDirty && this.flushTimer === null) {
      this.flushTimer = setTimeout(() => {
        this.flushTimer = null;
        const flushed = flushDraft(this.view, this.keys, this.now());
        this.keys = flushed.keys;
        if (flushed.frame && this.socket?.readyState === WebSocket.OPEN) {
          this.socket.send(encodeClientEvent(flushed.frame));
        }
      }, DRAFT_DEBOUNCE_MS) as unknown as number;
    }
    if (this.keys.shake) {
      this.root.querySelector(".input-row")?.classList.add("shake");
      setTimeout(
        () => this.root.querySelector(".input-row")?.classList.remove("shake"),
        250
      );
      this.keys = { ...this.keys, shake: false };
    }
    this.render();
  }

  render(): void {
    const list = this.root.querySelector(".messages");
    if (!list) return;
    list.innerHTML = "";
    for (const message of this.view.messages) {
      const node = document.createElement("div");
      node.className = BUBBLE_STYLES[message.visualState];
      node.textContent = message.text;
      list.appendChild(node);
    }
    const indicator = this.root.querySelector(".indicator");
    if (indicator) {
      indicator.textContent =
        indicatorPolicy(this.view, this.now()) === "visible" ? "Bot is typing ..." : "";
    }
    const banner = this.root.querySelector(".banner");
    if (banner) {
      banner.textContent = this.view.connection === "lost" ? "connection lost" : "";
    }
    list.scrollTop = list.scrollHeight;
  }
}

export async function boot(root: HTMLElement): Promise<void> {
  const response = await fetch("/sessions", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: "{}",
  });
  const { session_id } = await response.json();
  const client = new ChatClient(root, session_id);
  await client.connect();
  const input = root.querySelector<HTMLInputElement>(".input-row input");
  input?.addEventListener("keydown", (event) => {
    if (event.key === "Enter" || event.key === "Backspace" || event.key.length === 1) {
      event.preventDefault();
      client.onKey(event.key);
      if (input) input.value = "";
    }
  });
  // keep the indicator's linger timing fresh even without new frames
  setInterval(() => client.render(), 150);
}
