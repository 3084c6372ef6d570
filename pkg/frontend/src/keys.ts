// Keyboard handling for the input line. There is no send button: Enter
// submits, every other edit mutates the local draft and emits a draft
// snapshot, debounced to at most one frame per 50 ms. The caller owns a
// flush timer for the trailing edge (see flushDraft).

import type { ClientEvent } from "./protocol.js";
import type { ViewMessage, ViewState } from "./reducer.js";

export const DRAFT_DEBOUNCE_MS = 50;

export interface KeyState {
  lastDraftFrameAt: number;
  draftDirty: boolean;
  /** set by Enter on an empty draft; the DOM layer plays a shake and clears it */
  shake: boolean;
}

export function initialKeyState(): KeyState {
  return { lastDraftFrameAt: -DRAFT_DEBOUNCE_MS, draftDirty: false, shake: false };
}

export interface KeyResult {
  view: ViewState;
  keys: KeyState;
  frame: ClientEvent | null;
}

function withMyBubble(view: ViewState, text: string): ViewState {
  const draftAt = view.messages.findIndex((m) => m.visualState === "draft_gray");
  if (text === "") {
    if (draftAt === -1) return view;
    return { ...view, messages: view.messages.filter((_, i) => i !== draftAt) };
  }
  const bubble: ViewMessage = {
    id: null,
    role: "user",
    text,
    visualState: "draft_gray",
    sealed: false,
  };
  if (draftAt === -1) {
    return { ...view, messages: [...view.messages, bubble] };
  }
  return { ...view, messages: view.messages.map((m, i) => (i === draftAt ? bubble : m)) };
}

export function handleKey(
  view: ViewState,
  keys: KeyState,
  key: string,
  now: number
): KeyResult {
  if (key === "Enter") {
    if (view.myDraft === "") {
      return { view, keys: { ...keys, shake: true }, frame: null };
    }
    // the gray bubble stays until the ack turns it light blue
    const sentView = { ...withMyBubble(view, view.myDraft), myDraft: "" };
    return {
      view: sentView,
      keys: { ...keys, draftDirty: false, shake: false },
      frame: { type: "send", ts: now },
    };
  }

  let draft = view.myDraft;
  if (key === "Backspace") {
    draft = draft.slice(0, -1);
  } else if (key.length === 1) {
    draft = draft + key;
  } else {
    return { view, keys, frame: null }; // navigation keys and the like
  }

  const nextView = { ...withMyBubble(view, draft), myDraft: draft };
  if (now - keys.lastDraftFrameAt >= DRAFT_DEBOUNCE_MS) {
    return {
      view: nextView,
      keys: { ...keys, lastDraftFrameAt: now, draftDirty: false, shake: false },
      frame: { type: "draft_update", text: draft, ts: now },
    };
  }
  return { view: nextView, keys: { ...keys, draftDirty: true, shake: false }, frame: null };
}

/** Trailing-edge debounce flush; call from a timer. */
export function flushDraft(view: ViewState, keys: KeyState, now: number): KeyResult {
  if (!keys.draftDirty || now - keys.lastDraftFrameAt < DRAFT_DEBOUNCE_MS) {
    return { view, keys, frame: null };
  }
  return {
    view,
    keys: { ...keys, lastDraftFrameAt: now, draftDirty: false },
    frame: { type: "draft_update", text: view.myDraft, ts: now },
  };
}
