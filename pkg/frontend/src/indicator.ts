// "... is typing" visibility: on while the bot is emitting, lingering for a
// short grace period after it goes idle so the label does not flicker
// between consecutive chunks.

import type { ViewState } from "./reducer.js";

export const INDICATOR_LINGER_MS = 300;

export function indicatorPolicy(view: ViewState, now: number): "visible" | "hidden" {
  if (view.connection === "lost") return "hidden";
  if (view.botTypingActive) return "visible";
  if (view.botIdleAt !== null && now - view.botIdleAt < INDICATOR_LINGER_MS) {
    return "visible";
  }
  return "hidden";
}
